use serde::{Deserialize, Serialize};

use super::PlantError;

/// External flow applied to a channel over a half-open tick range
/// `[start_tick, end_tick)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceWindow {
    pub start_tick: u64,
    pub end_tick: u64,
    /// L/min, positive into the chamber.
    pub flow: f64,
}

impl DisturbanceWindow {
    pub fn flow_at(&self, tick: u64) -> f64 {
        if self.is_active(tick) {
            self.flow
        } else {
            0.0
        }
    }

    pub fn is_active(&self, tick: u64) -> bool {
        (self.start_tick..self.end_tick).contains(&tick)
    }

    pub fn is_expired(&self, tick: u64) -> bool {
        tick >= self.end_tick
    }
}

/// Schedules a disturbance of `flow` L/min lasting `duration` seconds starting
/// at `now_tick`. The duration is rounded to whole ticks of `dt` seconds, with
/// a minimum of one tick.
///
/// A zero flow is a no-op and leaves `slot` untouched.
pub fn inject_disturbance(
    slot: &mut Option<DisturbanceWindow>,
    now_tick: u64,
    flow: f64,
    duration: f64,
    dt: f64,
) -> Result<(), PlantError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(PlantError::InvalidParameter("disturbance duration must be > 0"));
    }
    if !flow.is_finite() {
        return Err(PlantError::InvalidParameter("disturbance flow must be finite"));
    }
    if let Some(active) = slot {
        if !active.is_expired(now_tick) {
            return Err(PlantError::OverlappingDisturbance { until_tick: active.end_tick });
        }
    }
    if flow == 0.0 {
        return Ok(());
    }
    let ticks = ((duration / dt).round() as u64).max(1);
    *slot = Some(DisturbanceWindow { start_tick: now_tick, end_tick: now_tick + ticks, flow });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_covers_exact_interval() {
        let mut slot = None;
        // t = 5 s at 50 Hz is tick 250; one second is 50 ticks.
        inject_disturbance(&mut slot, 250, -0.5, 1.0, 0.02).unwrap();
        let w = slot.unwrap();
        assert_eq!(w.flow_at(249), 0.0);
        assert_eq!(w.flow_at(250), -0.5);
        assert_eq!(w.flow_at(299), -0.5);
        assert_eq!(w.flow_at(300), 0.0);
    }

    #[test]
    fn zero_flow_is_noop() {
        let mut slot = None;
        inject_disturbance(&mut slot, 10, 0.0, 1.0, 0.02).unwrap();
        assert!(slot.is_none());
    }

    #[test]
    fn overlapping_rejected_until_expired() {
        let mut slot = None;
        inject_disturbance(&mut slot, 0, 0.3, 0.5, 0.02).unwrap();
        let err = inject_disturbance(&mut slot, 10, 0.1, 0.5, 0.02).unwrap_err();
        assert_eq!(err, PlantError::OverlappingDisturbance { until_tick: 25 });
        inject_disturbance(&mut slot, 25, 0.1, 0.5, 0.02).unwrap();
        assert_eq!(slot.unwrap().start_tick, 25);
    }

    #[test]
    fn rejects_non_positive_duration() {
        let mut slot = None;
        assert!(inject_disturbance(&mut slot, 0, 0.3, 0.0, 0.02).is_err());
        assert!(inject_disturbance(&mut slot, 0, 0.3, -1.0, 0.02).is_err());
    }
}
