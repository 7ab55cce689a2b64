//! Step-response metrics.
//!
//! A step is a maximal run of snapshots with the same target on one channel.
//! Its reference point is the last sample before the target changed. Metrics:
//!
//! - settling band: ±2% of the step size, at least ±0.2 kPa
//! - settle time: from the reference tick to the first sample after which the
//!   pressure stays in the band; zero if it never leaves, `None` if the last
//!   sample is still outside
//! - overshoot: excursion past the target in the step direction
//! - steady-state error: mean |target − pressure| over the final quarter
//! - oscillation: total variation of the tracking error minus its net change
//!
//! [`StepAnalyzer`] computes these incrementally from snapshots;
//! [`analyze_rows`] recomputes them from a recording.

use std::collections::BTreeMap;

use openpneu_core::TelemetrySnapshot;
use serde::{Deserialize, Serialize};

use crate::recording::RecordingRow;

pub const BAND_FRACTION: f64 = 0.02;
pub const BAND_FLOOR_KPA: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub channel: usize,
    pub start_tick: u64,
    pub from_kpa: f64,
    pub target_kpa: f64,
    pub samples: usize,
    pub settle_s: Option<f64>,
    pub overshoot_kpa: f64,
    /// Relative to the step size; absent for steps smaller than the band floor.
    pub overshoot_pct: Option<f64>,
    pub steady_state_error: f64,
    pub oscillation: f64,
}

impl StepReport {
    pub fn band(&self) -> f64 {
        band(self.from_kpa, self.target_kpa)
    }
}

fn band(from: f64, target: f64) -> f64 {
    (BAND_FRACTION * (target - from).abs()).max(BAND_FLOOR_KPA)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub steps: Vec<StepReport>,
    pub max_overshoot_pct: Option<f64>,
    /// Slowest settle across steps; `None` if any step never settled.
    pub max_settle_s: Option<f64>,
    /// Sum of step oscillation metrics, per channel.
    pub oscillation: Vec<f64>,
}

impl TrajectoryReport {
    fn from_steps(steps: Vec<StepReport>, channels: usize) -> Self {
        let max_overshoot_pct = steps.iter().filter_map(|s| s.overshoot_pct).reduce(f64::max);
        let max_settle_s = steps.iter().try_fold(0.0f64, |acc, s| s.settle_s.map(|t| acc.max(t)));
        let mut oscillation = vec![0.0; channels];
        for s in &steps {
            oscillation[s.channel] += s.oscillation;
        }
        Self { steps, max_overshoot_pct, max_settle_s, oscillation }
    }

    pub fn steps_for(&self, channel: usize) -> impl Iterator<Item = &StepReport> {
        self.steps.iter().filter(move |s| s.channel == channel)
    }
}

#[derive(Debug, Clone)]
struct OpenStep {
    start_tick: u64,
    from: f64,
    target: f64,
    ticks: Vec<u64>,
    pressures: Vec<f64>,
}

/// Incremental analyzer fed one snapshot at a time.
#[derive(Debug, Clone)]
pub struct StepAnalyzer {
    dt: f64,
    open: Vec<Option<OpenStep>>,
    prev: Vec<Option<(u64, f64)>>,
    done: Vec<StepReport>,
}

impl StepAnalyzer {
    pub fn new(channels: usize, dt: f64) -> Self {
        Self { dt, open: vec![None; channels], prev: vec![None; channels], done: Vec::new() }
    }

    /// Records the state just before the first step without opening one.
    pub fn prime(&mut self, snap: &TelemetrySnapshot) {
        for (c, ch) in snap.channels.iter().enumerate().take(self.prev.len()) {
            self.prev[c] = Some((snap.tick, ch.pressure));
        }
    }

    pub fn observe(&mut self, snap: &TelemetrySnapshot) {
        for (c, ch) in snap.channels.iter().enumerate().take(self.open.len()) {
            let changed = self.open[c].as_ref().is_none_or(|s| s.target != ch.target);
            if changed {
                if let Some(s) = self.open[c].take() {
                    self.done.push(close(c, s, self.dt));
                }
                let (start_tick, from) = self.prev[c].unwrap_or((snap.tick, ch.pressure));
                self.open[c] =
                    Some(OpenStep { start_tick, from, target: ch.target, ticks: Vec::new(), pressures: Vec::new() });
            }
            let s = self.open[c].as_mut().expect("opened above");
            s.ticks.push(snap.tick);
            s.pressures.push(ch.pressure);
            self.prev[c] = Some((snap.tick, ch.pressure));
        }
    }

    pub fn finish(mut self) -> TrajectoryReport {
        for c in 0..self.open.len() {
            if let Some(s) = self.open[c].take() {
                self.done.push(close(c, s, self.dt));
            }
        }
        let mut steps = self.done;
        steps.sort_by_key(|s| (s.start_tick, s.channel));
        TrajectoryReport::from_steps(steps, self.open.len())
    }
}

fn close(channel: usize, s: OpenStep, dt: f64) -> StepReport {
    let band = band(s.from, s.target);
    let size = (s.target - s.from).abs();
    let last_out = s.pressures.iter().rposition(|p| (p - s.target).abs() > band);
    let settle_s = match last_out {
        None => Some(0.0),
        Some(i) if i + 1 == s.pressures.len() => None,
        Some(i) => Some((s.ticks[i + 1] - s.start_tick) as f64 * dt),
    };
    let rising = s.target >= s.from;
    let mut overshoot = 0.0f64;
    for &p in &s.pressures {
        let past = if rising { p - s.target } else { s.target - p };
        overshoot = overshoot.max(past);
    }
    let tail = s.pressures.len().div_ceil(4).max(1);
    let tail_sum: f64 = s.pressures[s.pressures.len() - tail..].iter().map(|p| (s.target - p).abs()).sum();
    let mut variation = 0.0;
    for k in 1..s.pressures.len() {
        variation += ((s.target - s.pressures[k]) - (s.target - s.pressures[k - 1])).abs();
    }
    let net = match (s.pressures.first(), s.pressures.last()) {
        (Some(a), Some(b)) => ((s.target - b) - (s.target - a)).abs(),
        _ => 0.0,
    };
    StepReport {
        channel,
        start_tick: s.start_tick,
        from_kpa: s.from,
        target_kpa: s.target,
        samples: s.pressures.len(),
        settle_s,
        overshoot_kpa: overshoot,
        overshoot_pct: (size >= BAND_FLOOR_KPA).then(|| 100.0 * overshoot / size),
        steady_state_error: tail_sum / tail as f64,
        oscillation: (variation - net).max(0.0),
    }
}

/// Offline recomputation from recorded rows. The first row of each channel is
/// the reference state before the run and does not belong to a step.
pub fn analyze_rows(rows: &[RecordingRow], dt: f64) -> TrajectoryReport {
    let mut by_channel: BTreeMap<usize, Vec<&RecordingRow>> = BTreeMap::new();
    for r in rows {
        by_channel.entry(r.channel).or_default().push(r);
    }
    let channels = by_channel.keys().next_back().map_or(0, |c| c + 1);
    let mut steps = Vec::new();
    for (&channel, series) in by_channel.iter_mut() {
        series.sort_by_key(|r| r.sim_tick);
        let mut begin = 1;
        while begin < series.len() {
            let target = series[begin].target;
            let end = series[begin..].iter().position(|r| r.target != target).map_or(series.len(), |k| begin + k);
            steps.push(offline_step(channel, series[begin - 1], &series[begin..end], dt));
            begin = end;
        }
    }
    steps.sort_by_key(|s| (s.start_tick, s.channel));
    TrajectoryReport::from_steps(steps, channels)
}

fn offline_step(channel: usize, reference: &RecordingRow, rows: &[&RecordingRow], dt: f64) -> StepReport {
    let (from, target) = (reference.pressure, rows[0].target);
    let size = (target - from).abs();
    let band = (size * BAND_FRACTION).max(BAND_FLOOR_KPA);
    let inside = |r: &&&RecordingRow| (r.pressure - target).abs() <= band;

    // Walk back from the end while the pressure is in the band.
    let settled_from = rows.len() - rows.iter().rev().take_while(inside).count();
    let settle_s = if settled_from == 0 {
        Some(0.0)
    } else if settled_from == rows.len() {
        None
    } else {
        Some((rows[settled_from].sim_tick - reference.sim_tick) as f64 * dt)
    };

    let sign = if target >= from { 1.0 } else { -1.0 };
    let overshoot = rows.iter().map(|r| sign * (r.pressure - target)).fold(0.0, f64::max);

    let errors: Vec<f64> = rows.iter().map(|r| target - r.pressure).collect();
    let quarter = errors.len().div_ceil(4).max(1);
    let steady = errors.iter().skip(errors.len() - quarter).map(|e| e.abs()).sum::<f64>() / quarter as f64;
    let variation: f64 = errors.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let net = (errors[errors.len() - 1] - errors[0]).abs();

    StepReport {
        channel,
        start_tick: reference.sim_tick,
        from_kpa: from,
        target_kpa: target,
        samples: rows.len(),
        settle_s,
        overshoot_kpa: overshoot,
        overshoot_pct: if size >= BAND_FLOOR_KPA { Some(overshoot / size * 100.0) } else { None },
        steady_state_error: steady,
        oscillation: (variation - net).max(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use openpneu_core::{ChannelTelemetry, Duty, Valve};

    fn snap(tick: u64, p: f64, t: f64) -> TelemetrySnapshot {
        TelemetrySnapshot {
            tick,
            channels: vec![ChannelTelemetry {
                pressure: p,
                target: t,
                flow: 0.0,
                inflate_duty: Duty::ZERO,
                deflate_duty: Duty::ZERO,
                valve: Valve::InflatePath,
                enabled: true,
            }],
        }
    }

    #[test]
    fn hand_computed_step() {
        let mut a = StepAnalyzer::new(1, 0.02);
        a.prime(&snap(0, 0.0, 0.0));
        for (k, p) in [5.0, 9.0, 10.5, 10.1, 10.0, 10.0, 10.0, 10.0].into_iter().enumerate() {
            a.observe(&snap(k as u64 + 1, p, 10.0));
        }
        let r = a.finish();
        let s = &r.steps[0];
        assert_eq!(s.band(), 0.2);
        // last sample outside the band is 10.5 at tick 3
        assert_eq!(s.settle_s, Some(4.0 * 0.02));
        assert_eq!(s.overshoot_kpa, 0.5);
        assert_eq!(s.overshoot_pct, Some(5.0));
        assert_eq!(s.steady_state_error, 0.0);
        // errors 5, 1, -0.5, -0.1, 0...: variation 4 + 1.5 + 0.4 + 0.1 = 6, net 5
        assert!((s.oscillation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_target_settles_immediately() {
        let mut a = StepAnalyzer::new(1, 0.02);
        a.prime(&snap(0, 0.0, 0.0));
        for k in 1..10 {
            a.observe(&snap(k, 0.0, 0.0));
        }
        let r = a.finish();
        assert_eq!(r.steps.len(), 1);
        assert_eq!(r.steps[0].settle_s, Some(0.0));
        assert_eq!(r.steps[0].steady_state_error, 0.0);
        assert_eq!(r.steps[0].overshoot_pct, None);
    }

    #[test]
    fn never_settled() {
        let mut a = StepAnalyzer::new(1, 0.02);
        a.prime(&snap(0, 0.0, 0.0));
        for k in 1..5 {
            a.observe(&snap(k, k as f64, 30.0));
        }
        let r = a.finish();
        assert_eq!(r.steps[0].settle_s, None);
        assert_eq!(r.max_settle_s, None);
    }
}
