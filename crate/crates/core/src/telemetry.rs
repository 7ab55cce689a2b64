use serde::{Deserialize, Serialize};

use crate::controller::Duty;
use crate::plant::Valve;

/// One channel's post-tick measurements and actuation outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelTelemetry {
    /// kPa gauge.
    pub pressure: f64,
    /// kPa gauge.
    pub target: f64,
    /// L/min into the chamber.
    pub flow: f64,
    pub inflate_duty: Duty,
    pub deflate_duty: Duty,
    pub valve: Valve,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySnapshot {
    pub tick: u64,
    pub channels: Vec<ChannelTelemetry>,
}

impl TelemetrySnapshot {
    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }
}
