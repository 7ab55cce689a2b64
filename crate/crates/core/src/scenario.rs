//! Scripted disturbance and leak schedules.
//!
//! A scenario is a JSON array of events:
//!
//! ```json
//! [
//!   {"time_s": 5.0, "channel": 0, "kind": "disturbance", "value": 0.3, "duration_s": 0.5},
//!   {"time_s": 8.0, "channel": 1, "kind": "leak", "value": 0.02},
//!   {"time_s": 9.0, "channel": 2, "kind": "leak", "value": 0.05, "duration_s": 2.0}
//! ]
//! ```
//!
//! `value` is L/min for disturbances and (L/min)/kPa for leaks. A leak with a
//! duration reverts to the channel's previous coefficient when it ends.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{Device, DeviceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Disturbance,
    Leak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEvent {
    pub time_s: f64,
    pub channel: usize,
    pub kind: EventKind,
    pub value: f64,
    #[serde(default)]
    pub duration_s: Option<f64>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("event {index}: {reason}")]
    Invalid { index: usize, reason: &'static str },
    #[error("applying event at {time_s} s: {source}")]
    Device { time_s: f64, source: DeviceError },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Action {
    Disturbance { flow: f64, duration: f64 },
    Leak(f64),
    RestoreLeak,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pending {
    tick: u64,
    seq: usize,
    channel: usize,
    time_s: f64,
    action: Action,
}

/// Replays a scenario against a device at tick granularity.
///
/// Call [`ScenarioRunner::apply_due`] before each [`Device::tick`]; every event
/// whose time rounds to the current tick or earlier is applied.
#[derive(Debug, Clone)]
pub struct ScenarioRunner {
    pending: Vec<Pending>,
    saved_leak: Vec<(usize, f64)>,
    next_seq: usize,
}

pub fn parse_scenario(text: &str) -> Result<Vec<ScenarioEvent>, ScenarioError> {
    let events: Vec<ScenarioEvent> = serde_json::from_str(text)?;
    for (index, e) in events.iter().enumerate() {
        let invalid = |reason| Err(ScenarioError::Invalid { index, reason });
        if !(e.time_s.is_finite() && e.time_s >= 0.0) {
            return invalid("time_s must be >= 0");
        }
        if !e.value.is_finite() {
            return invalid("value must be finite");
        }
        match (e.kind, e.duration_s) {
            (EventKind::Disturbance, None) => return invalid("disturbance needs duration_s"),
            (_, Some(d)) if !(d.is_finite() && d > 0.0) => return invalid("duration_s must be > 0"),
            _ => {}
        }
    }
    Ok(events)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Vec<ScenarioEvent>, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    parse_scenario(&text)
}

impl ScenarioRunner {
    pub fn new(events: &[ScenarioEvent], dt: f64) -> Self {
        let mut runner = Self { pending: Vec::new(), saved_leak: Vec::new(), next_seq: 0 };
        for e in events {
            let action = match e.kind {
                EventKind::Disturbance => Action::Disturbance { flow: e.value, duration: e.duration_s.unwrap_or(dt) },
                EventKind::Leak => Action::Leak(e.value),
            };
            let tick = (e.time_s / dt).round() as u64;
            runner.schedule(tick, e.channel, e.time_s, action);
            if let (EventKind::Leak, Some(d)) = (e.kind, e.duration_s) {
                runner.schedule(tick + ((d / dt).round() as u64).max(1), e.channel, e.time_s + d, Action::RestoreLeak);
            }
        }
        runner
    }

    fn schedule(&mut self, tick: u64, channel: usize, time_s: f64, action: Action) {
        self.pending.push(Pending { tick, seq: self.next_seq, channel, time_s, action });
        self.next_seq += 1;
        // Latest first so due events pop off the end in order.
        self.pending.sort_by_key(|e| std::cmp::Reverse((e.tick, e.seq)));
    }

    pub fn is_finished(&self) -> bool {
        self.pending.is_empty()
    }

    /// Tick of the last scheduled action, if any remain.
    pub fn last_tick(&self) -> Option<u64> {
        self.pending.first().map(|p| p.tick)
    }

    pub fn apply_due(&mut self, device: &mut Device) -> Result<usize, ScenarioError> {
        let now = device.tick_count();
        let mut applied = 0;
        while self.pending.last().is_some_and(|p| p.tick <= now) {
            let p = self.pending.pop().expect("checked non-empty");
            let wrap = |source| ScenarioError::Device { time_s: p.time_s, source };
            match p.action {
                Action::Disturbance { flow, duration } => {
                    device.inject_disturbance(p.channel, flow, duration).map_err(wrap)?
                }
                Action::Leak(k) => {
                    let prev =
                        device.channel(p.channel).map(|c| c.params.chamber.leak_coefficient).ok_or_else(|| {
                            wrap(DeviceError::ChannelOutOfRange { channel: p.channel, count: device.channel_count() })
                        })?;
                    device.set_leak(p.channel, k).map_err(wrap)?;
                    self.saved_leak.push((p.channel, prev));
                }
                Action::RestoreLeak => {
                    if let Some(pos) = self.saved_leak.iter().rposition(|(c, _)| *c == p.channel) {
                        let (_, k) = self.saved_leak.remove(pos);
                        device.set_leak(p.channel, k).map_err(wrap)?;
                    }
                }
            }
            applied += 1;
        }
        Ok(applied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"[
        {"time_s": 0.1, "channel": 0, "kind": "disturbance", "value": 0.3, "duration_s": 0.5},
        {"time_s": 0.0, "channel": 1, "kind": "leak", "value": 0.02, "duration_s": 0.2}
    ]"#;

    #[test]
    fn parses_and_validates() {
        let events = parse_scenario(EXAMPLE).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].kind, EventKind::Disturbance);
        assert!(parse_scenario(r#"[{"time_s": 1, "channel": 0, "kind": "disturbance", "value": 1}]"#).is_err());
        assert!(parse_scenario(r#"[{"time_s": -1, "channel": 0, "kind": "leak", "value": 1}]"#).is_err());
        assert!(parse_scenario(r#"[{"time_s": 1, "channel": 0, "kind": "spike", "value": 1}]"#).is_err());
    }

    #[test]
    fn events_fire_on_their_tick() {
        let mut dev = Device::simulated(2).unwrap();
        let mut runner = ScenarioRunner::new(&parse_scenario(EXAMPLE).unwrap(), dev.dt());
        assert_eq!(runner.apply_due(&mut dev).unwrap(), 1);
        assert_eq!(dev.channel(1).unwrap().params.chamber.leak_coefficient, 0.02);
        for _ in 0..5 {
            dev.tick().unwrap();
            assert_eq!(runner.apply_due(&mut dev).unwrap(), usize::from(dev.tick_count() == 5));
        }
        assert_eq!(dev.channel(0).unwrap().disturbance.unwrap().start_tick, 5);
        assert_eq!(dev.channel(0).unwrap().disturbance.unwrap().end_tick, 30);
        dev.run(5).unwrap();
        runner.apply_due(&mut dev).unwrap();
        assert_eq!(dev.channel(1).unwrap().params.chamber.leak_coefficient, 0.0);
        assert!(runner.is_finished());
    }

    #[test]
    fn bad_channel_reports_time() {
        let events = parse_scenario(r#"[{"time_s": 0, "channel": 9, "kind": "leak", "value": 0.1}]"#).unwrap();
        let mut dev = Device::simulated(1).unwrap();
        let err = ScenarioRunner::new(&events, dev.dt()).apply_due(&mut dev).unwrap_err();
        assert!(matches!(err, ScenarioError::Device { source: DeviceError::ChannelOutOfRange { .. }, .. }));
    }
}
