//! Scripted setpoint sequences.
//!
//! ```json
//! {
//!   "loops": 2,
//!   "hold_s": 1.5,
//!   "steps": [
//!     {"time_s": 0.0, "channel": "all", "target_kpa": 30.0},
//!     {"time_s": 1.5, "channel": 3, "target_kpa": -10.0}
//!   ]
//! }
//! ```
//!
//! Times are relative to the start of each pass. One pass lasts until the
//! last step plus `hold_s`; `loops` repeats the pass.

use std::fmt;
use std::path::Path;

use openpneu_core::TelemetrySnapshot;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::analysis::{StepAnalyzer, TrajectoryReport};

pub const DEFAULT_HOLD_S: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelRef {
    All,
    One(usize),
}

impl Serialize for ChannelRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ChannelRef::All => s.serialize_str("all"),
            ChannelRef::One(c) => s.serialize_u64(*c as u64),
        }
    }
}

impl<'de> Deserialize<'de> for ChannelRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = ChannelRef;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a channel index or \"all\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<ChannelRef, E> {
                usize::try_from(v).map(ChannelRef::One).map_err(E::custom)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<ChannelRef, E> {
                usize::try_from(v).map(ChannelRef::One).map_err(E::custom)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<ChannelRef, E> {
                if v.eq_ignore_ascii_case("all") {
                    Ok(ChannelRef::All)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setpoint {
    pub time_s: f64,
    pub channel: ChannelRef,
    #[serde(alias = "target")]
    pub target_kpa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub steps: Vec<Setpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loops: Option<u32>,
    #[serde(default = "default_hold")]
    pub hold_s: f64,
}

fn default_hold() -> f64 {
    DEFAULT_HOLD_S
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing trajectory: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("trajectory has no steps")]
    Empty,
    #[error("step {0}: time goes backwards or is not finite")]
    NonMonotonic(usize),
    #[error("step {index}: target {target} kPa outside [{min}, {max}]")]
    EnvelopeViolation { index: usize, target: f64, min: f64, max: f64 },
    #[error("step {index}: channel {channel} out of range")]
    ChannelOutOfRange { index: usize, channel: usize },
    #[error("hold_s must be >= 0")]
    BadHold,
}

impl Trajectory {
    pub fn parse(text: &str) -> Result<Self, TrajectoryError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrajectoryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| TrajectoryError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    /// Single setpoint held for `hold_s`.
    pub fn step(channel: ChannelRef, target_kpa: f64, hold_s: f64) -> Self {
        Self { steps: vec![Setpoint { time_s: 0.0, channel, target_kpa }], loops: None, hold_s }
    }

    /// All channels alternate between two whole-hand poses: the first `flexed`
    /// channels go to `flex` while the rest go to `extend`, then the roles swap.
    pub fn gestures(channels: usize, flexed: usize, flex: f64, extend: f64, period_s: f64, loops: u32) -> Self {
        let pose = |first: bool| {
            (0..channels).map(move |c| if (c < flexed) == first { flex } else { extend }).collect::<Vec<_>>()
        };
        let mut steps = Vec::new();
        for (k, targets) in [pose(true), pose(false)].into_iter().enumerate() {
            for (c, t) in targets.into_iter().enumerate() {
                steps.push(Setpoint { time_s: k as f64 * period_s, channel: ChannelRef::One(c), target_kpa: t });
            }
        }
        Self { steps, loops: Some(loops), hold_s: period_s }
    }

    /// Triangle wave on one channel, as a staircase of `stair_s`-long steps.
    pub fn triangle(channel: usize, low: f64, high: f64, ramp_s: f64, stair_s: f64) -> Self {
        let n = (ramp_s / stair_s).round().max(1.0) as usize;
        let mut steps = Vec::new();
        for k in 0..=2 * n {
            let frac = if k <= n { k as f64 / n as f64 } else { (2 * n - k) as f64 / n as f64 };
            let target = ((low + (high - low) * frac) * 100.0).round() / 100.0;
            steps.push(Setpoint { time_s: k as f64 * stair_s, channel: ChannelRef::One(channel), target_kpa: target });
        }
        Self { steps, loops: None, hold_s: stair_s }
    }

    pub fn validate(&self, channel_count: usize, envelope: (f64, f64)) -> Result<(), TrajectoryError> {
        if self.steps.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        if !(self.hold_s.is_finite() && self.hold_s >= 0.0) {
            return Err(TrajectoryError::BadHold);
        }
        let mut prev = 0.0;
        for (index, s) in self.steps.iter().enumerate() {
            if !s.time_s.is_finite() || s.time_s < prev {
                return Err(TrajectoryError::NonMonotonic(index));
            }
            prev = s.time_s;
            let (min, max) = envelope;
            if !(s.target_kpa.is_finite() && (min..=max).contains(&s.target_kpa)) {
                return Err(TrajectoryError::EnvelopeViolation { index, target: s.target_kpa, min, max });
            }
            if let ChannelRef::One(channel) = s.channel {
                if channel >= channel_count {
                    return Err(TrajectoryError::ChannelOutOfRange { index, channel });
                }
            }
        }
        Ok(())
    }

    pub fn pass_seconds(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.time_s) + self.hold_s
    }

    pub fn total_seconds(&self) -> f64 {
        self.pass_seconds() * f64::from(self.loops.unwrap_or(1).max(1))
    }

    /// Unrolled `(tick offset, channel, target)` events.
    pub fn events(&self, dt: f64) -> Vec<(u64, ChannelRef, f64)> {
        let pass = self.pass_seconds();
        (0..self.loops.unwrap_or(1).max(1))
            .flat_map(|k| {
                self.steps
                    .iter()
                    .map(move |s| (((f64::from(k) * pass + s.time_s) / dt).round() as u64, s.channel, s.target_kpa))
            })
            .collect()
    }
}

/// Setpoint change requested by a runner.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    SetTarget(usize, f64),
    SetAll(Vec<f64>),
}

/// Drives a trajectory from snapshots: tell it each snapshot and apply the
/// actions it returns before the next tick.
#[derive(Debug)]
pub struct TrajectoryRunner {
    events: Vec<(u64, ChannelRef, f64)>,
    cursor: usize,
    start_tick: u64,
    end_tick: u64,
    targets: Vec<f64>,
    analyzer: StepAnalyzer,
}

impl TrajectoryRunner {
    /// `targets` are the device's current setpoints; `start_tick` is the tick
    /// count at which the first step is due.
    pub fn new(traj: &Trajectory, targets: Vec<f64>, start_tick: u64, dt: f64) -> Self {
        let end_tick = start_tick + (traj.total_seconds() / dt).round() as u64;
        Self {
            events: traj.events(dt),
            cursor: 0,
            start_tick,
            end_tick,
            analyzer: StepAnalyzer::new(targets.len(), dt),
            targets,
        }
    }

    pub fn end_tick(&self) -> u64 {
        self.end_tick
    }

    pub fn is_done(&self, tick: u64) -> bool {
        tick >= self.end_tick
    }

    /// Actions due at or before `tick`.
    pub fn due(&mut self, tick: u64) -> Vec<Action> {
        let mut touched = Vec::new();
        let mut any_all = false;
        while let Some(&(offset, channel, target)) = self.events.get(self.cursor) {
            if self.start_tick + offset > tick {
                break;
            }
            self.cursor += 1;
            match channel {
                ChannelRef::All => {
                    any_all = true;
                    self.targets.iter_mut().for_each(|t| *t = target);
                }
                ChannelRef::One(c) => {
                    self.targets[c] = target;
                    touched.push(c);
                }
            }
        }
        if any_all || touched.len() > 1 {
            vec![Action::SetAll(self.targets.clone())]
        } else {
            touched.into_iter().map(|c| Action::SetTarget(c, self.targets[c])).collect()
        }
    }

    /// Feeds a snapshot to the analysis. The snapshot at the start tick is
    /// the pre-step reference.
    pub fn observe(&mut self, snap: &TelemetrySnapshot) {
        if snap.tick == self.start_tick {
            self.analyzer.prime(snap);
        } else if snap.tick > self.start_tick && snap.tick <= self.end_tick {
            self.analyzer.observe(snap);
        }
    }

    pub fn finish(self) -> TrajectoryReport {
        self.analyzer.finish()
    }
}
