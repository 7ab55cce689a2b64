//! Per-channel PID pressure regulation and the mapping from a signed control
//! effort onto the two pump drivers and the path valve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::Valve;

/// Controller period in seconds (50 Hz).
pub const TICK_SECONDS: f64 = 0.02;

/// Full scale of the 12-bit PWM counter.
pub const PWM_FULL_SCALE: u16 = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("invalid controller parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    /// Proportional gain, 1/kPa.
    pub kp: f64,
    /// Integral gain, 1/(kPa*s).
    pub ki: f64,
    /// Derivative gain, s/kPa.
    pub kd: f64,
    /// Output saturation, `0 < output_limit <= 1`.
    pub output_limit: f64,
    /// Clamp on the integral accumulator, kPa*s.
    pub integral_limit: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp: 0.3, ki: 0.6, kd: 0.002, output_limit: 1.0, integral_limit: 15.0 }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let finite = [self.kp, self.ki, self.kd, self.output_limit, self.integral_limit].iter().all(|v| v.is_finite());
        if !finite {
            return Err(ControllerError::InvalidParameter("gains must be finite"));
        }
        if self.kp < 0.0 || self.ki < 0.0 || self.kd < 0.0 {
            return Err(ControllerError::InvalidParameter("kp, ki, kd must be >= 0"));
        }
        if !(self.output_limit > 0.0 && self.output_limit <= 1.0) {
            return Err(ControllerError::InvalidParameter("output_limit must be in (0, 1]"));
        }
        if self.integral_limit <= 0.0 {
            return Err(ControllerError::InvalidParameter("integral_limit must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    /// Accumulated error, kPa*s.
    pub integral: f64,
    pub prev_error: f64,
    pub saturated: bool,
}

impl PidState {
    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// One controller update.
///
/// The integral is clamped to `±integral_limit` and additionally frozen while
/// the output is saturated in the direction the current error would push it.
/// The derivative acts on the error.
pub fn pid_step(state: &PidState, gains: &PidGains, target: f64, measured: f64, dt: f64) -> (f64, PidState) {
    debug_assert!(dt > 0.0);
    let error = target - measured;
    let derivative = (error - state.prev_error) / dt;
    let limit = gains.integral_limit;

    let mut integral = (state.integral + error * dt).clamp(-limit, limit);
    let mut raw = gains.kp * error + gains.ki * integral + gains.kd * derivative;
    if raw.abs() > gains.output_limit && raw.signum() == error.signum() {
        integral = state.integral;
        raw = gains.kp * error + gains.ki * integral + gains.kd * derivative;
    }
    let u = raw.clamp(-gains.output_limit, gains.output_limit);
    let next = PidState { integral, prev_error: error, saturated: raw.abs() > gains.output_limit };
    (u, next)
}

/// PWM duty in counts of 1/4096, `0..=4095`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Duty(u16);

impl Duty {
    pub const ZERO: Duty = Duty(0);
    /// Highest representable duty, 4095/4096.
    pub const ONE: Duty = Duty(PWM_FULL_SCALE - 1);

    /// Clamps `counts` to the counter range.
    pub fn from_counts(counts: u16) -> Self {
        Duty(counts.min(PWM_FULL_SCALE - 1))
    }

    /// Rounds a fraction in `[0, 1]` to the nearest count; 1.0 maps to 4095.
    pub fn from_fraction(fraction: f64) -> Self {
        let f = if fraction.is_nan() { 0.0 } else { fraction.clamp(0.0, 1.0) };
        let counts = (f * f64::from(PWM_FULL_SCALE)).round() as u16;
        Duty::from_counts(counts)
    }

    pub fn counts(self) -> u16 {
        self.0
    }

    pub fn fraction(self) -> f64 {
        f64::from(self.0) / f64::from(PWM_FULL_SCALE)
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

/// Output of the controller to the pump drivers and valve.
///
/// Construction goes through [`ActuationCommand::inflate`],
/// [`ActuationCommand::deflate`] and [`ActuationCommand::idle`], so at most one
/// duty is ever nonzero and the valve always matches the active pump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ActuationCommand {
    inflate: Duty,
    deflate: Duty,
    valve: Valve,
}

impl ActuationCommand {
    pub fn inflate(duty: Duty) -> Self {
        Self { inflate: duty, deflate: Duty::ZERO, valve: Valve::InflatePath }
    }

    pub fn deflate(duty: Duty) -> Self {
        Self { inflate: Duty::ZERO, deflate: duty, valve: Valve::DeflatePath }
    }

    pub fn idle(valve: Valve) -> Self {
        Self { inflate: Duty::ZERO, deflate: Duty::ZERO, valve }
    }

    /// Rebuilds a command from a valve position and the duty of the pump on
    /// that path.
    pub fn on_path(valve: Valve, duty: Duty) -> Self {
        match valve {
            Valve::InflatePath => Self::inflate(duty),
            Valve::DeflatePath => Self::deflate(duty),
        }
    }

    pub fn inflate_duty(&self) -> f64 {
        self.inflate.fraction()
    }

    pub fn deflate_duty(&self) -> f64 {
        self.deflate.fraction()
    }

    pub fn inflate_counts(&self) -> Duty {
        self.inflate
    }

    pub fn deflate_counts(&self) -> Duty {
        self.deflate
    }

    /// Duty of whichever pump the valve connects.
    pub fn active_duty(&self) -> Duty {
        match self.valve {
            Valve::InflatePath => self.inflate,
            Valve::DeflatePath => self.deflate,
        }
    }

    pub fn valve(&self) -> Valve {
        self.valve
    }

    pub fn is_idle(&self) -> bool {
        self.inflate.is_zero() && self.deflate.is_zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelControlConfig {
    pub gains: PidGains,
    /// Error magnitude (kPa) below which both pumps are stopped.
    pub deadband: f64,
    /// Error magnitude (kPa) that must be exceeded to switch the valve.
    pub valve_hysteresis: f64,
    pub enabled: bool,
}

impl Default for ChannelControlConfig {
    fn default() -> Self {
        Self { gains: PidGains::default(), deadband: 0.05, valve_hysteresis: 0.2, enabled: true }
    }
}

impl ChannelControlConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        self.gains.validate()?;
        if !(self.deadband.is_finite() && self.deadband >= 0.0) {
            return Err(ControllerError::InvalidParameter("deadband must be >= 0"));
        }
        if !(self.valve_hysteresis.is_finite() && self.valve_hysteresis >= self.deadband) {
            return Err(ControllerError::InvalidParameter("valve_hysteresis must be >= deadband"));
        }
        Ok(())
    }
}

/// Maps a control effort onto pump duties and a valve position.
///
/// Inside the deadband both pumps stop and the valve holds. Beyond the
/// hysteresis band the error sign selects the path; between the two the
/// previous valve position is kept. A pump only runs when `u` asks for flow
/// in the direction of the selected path.
pub fn map_actuation(u: f64, error: f64, held: Valve, config: &ChannelControlConfig) -> ActuationCommand {
    if error.abs() < config.deadband {
        return ActuationCommand::idle(held);
    }
    let path = if error > config.valve_hysteresis {
        Valve::InflatePath
    } else if error < -config.valve_hysteresis {
        Valve::DeflatePath
    } else {
        held
    };
    match path {
        Valve::InflatePath if u > 0.0 => ActuationCommand::inflate(Duty::from_fraction(u)),
        Valve::DeflatePath if u < 0.0 => ActuationCommand::deflate(Duty::from_fraction(-u)),
        _ => ActuationCommand::idle(path),
    }
}

/// One 50 Hz control update for a channel: PID followed by actuation mapping.
///
/// A disabled channel gets an idle command on the held valve and its PID
/// memory is returned unchanged.
pub fn tick_channel(
    measured: f64,
    target: f64,
    config: &ChannelControlConfig,
    state: &PidState,
    held: Valve,
    dt: f64,
) -> (ActuationCommand, PidState) {
    if !config.enabled {
        return (ActuationCommand::idle(held), *state);
    }
    let (u, next) = pid_step(state, &config.gains, target, measured, dt);
    (map_actuation(u, target - measured, held, config), next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p_only(kp: f64) -> PidGains {
        PidGains { kp, ki: 0.0, kd: 0.0, output_limit: 1.0, integral_limit: 15.0 }
    }

    #[test]
    fn zero_error_zero_output() {
        let (u, s) = pid_step(&PidState::default(), &PidGains::default(), 30.0, 30.0, TICK_SECONDS);
        assert_eq!(u, 0.0);
        assert_eq!(s.integral, 0.0);
        assert!(!s.saturated);
    }

    #[test]
    fn proportional_arithmetic() {
        let (u, _) = pid_step(&PidState::default(), &p_only(0.05), 10.0, 0.0, TICK_SECONDS);
        assert!((u - 0.5).abs() < 1e-15);
    }

    #[test]
    fn output_is_clamped() {
        let (u, s) = pid_step(&PidState::default(), &p_only(0.05), 100.0, 0.0, TICK_SECONDS);
        assert_eq!(u, 1.0);
        assert!(s.saturated);
        let (u, _) = pid_step(&PidState::default(), &p_only(0.05), -100.0, 0.0, TICK_SECONDS);
        assert_eq!(u, -1.0);
    }

    #[test]
    fn integral_frozen_while_saturated_and_deepening() {
        let gains = PidGains { kp: 0.0, ki: 1.0, kd: 0.0, output_limit: 0.5, integral_limit: 15.0 };
        let mut s = PidState { integral: 0.6, ..PidState::default() };
        let (u, next) = pid_step(&s, &gains, 10.0, 0.0, TICK_SECONDS);
        assert_eq!(u, 0.5);
        assert_eq!(next.integral, 0.6);
        // Opposite error unwinds even while saturated.
        s = next;
        let (_, next) = pid_step(&s, &gains, -10.0, 0.0, TICK_SECONDS);
        assert!((next.integral - 0.4).abs() < 1e-12);
    }

    #[test]
    fn reset_zeroes_everything() {
        let mut s = PidState { integral: 3.0, prev_error: -2.0, saturated: true };
        s.reset();
        assert_eq!(s, PidState::default());
    }

    #[test]
    fn duty_quantization() {
        assert_eq!(Duty::from_fraction(0.5).counts(), 2048);
        assert_eq!(Duty::from_fraction(1.0).counts(), 4095);
        assert_eq!(Duty::from_fraction(0.0).counts(), 0);
        assert_eq!(Duty::from_fraction(-0.3).counts(), 0);
        assert_eq!(Duty::from_fraction(f64::NAN).counts(), 0);
        assert_eq!(Duty::from_counts(5000), Duty::ONE);
        assert_eq!(Duty::from_counts(2048).fraction(), 0.5);
    }

    #[test]
    fn map_examples() {
        let cfg = ChannelControlConfig::default();
        let cmd = map_actuation(0.5, 5.0, Valve::InflatePath, &cfg);
        assert_eq!(cmd, ActuationCommand::inflate(Duty::from_counts(2048)));
        assert_eq!(cmd.inflate_duty(), 0.5);

        let cmd = map_actuation(-1.0, -5.0, Valve::InflatePath, &cfg);
        assert_eq!(cmd.deflate_counts().counts(), 4095);
        assert_eq!(cmd.inflate_duty(), 0.0);
        assert_eq!(cmd.valve(), Valve::DeflatePath);

        let cfg = ChannelControlConfig { deadband: 0.1, ..ChannelControlConfig::default() };
        let cmd = map_actuation(0.3, 0.05, Valve::DeflatePath, &cfg);
        assert_eq!(cmd, ActuationCommand::idle(Valve::DeflatePath));
    }

    #[test]
    fn valve_holds_inside_hysteresis() {
        let cfg = ChannelControlConfig::default();
        // Error 0.1 kPa is past the deadband but inside the 0.2 kPa hysteresis:
        // a deflate-held valve does not flip for a positive effort.
        let cmd = map_actuation(0.2, 0.1, Valve::DeflatePath, &cfg);
        assert_eq!(cmd, ActuationCommand::idle(Valve::DeflatePath));
        // Same effort with the valve already on the inflate path runs the pump.
        let cmd = map_actuation(0.2, 0.1, Valve::InflatePath, &cfg);
        assert_eq!(cmd.valve(), Valve::InflatePath);
        assert!(!cmd.is_idle());
        // Past hysteresis the valve follows the error.
        let cmd = map_actuation(0.2, 0.3, Valve::DeflatePath, &cfg);
        assert_eq!(cmd.valve(), Valve::InflatePath);
    }

    #[test]
    fn effort_against_path_idles() {
        let cfg = ChannelControlConfig::default();
        // Integral still pushes inflation though the chamber is well above target.
        let cmd = map_actuation(0.4, -1.0, Valve::InflatePath, &cfg);
        assert_eq!(cmd, ActuationCommand::idle(Valve::DeflatePath));
    }

    #[test]
    fn disabled_channel_idles_and_keeps_state() {
        let cfg = ChannelControlConfig { enabled: false, ..ChannelControlConfig::default() };
        let s = PidState { integral: 1.5, prev_error: 2.0, saturated: false };
        let (cmd, next) = tick_channel(0.0, 30.0, &cfg, &s, Valve::DeflatePath, TICK_SECONDS);
        assert_eq!(cmd, ActuationCommand::idle(Valve::DeflatePath));
        assert_eq!(next, s);
    }

    #[test]
    fn at_target_no_actuation() {
        let cfg = ChannelControlConfig::default();
        let (cmd, _) = tick_channel(30.0, 30.0, &cfg, &PidState::default(), Valve::InflatePath, TICK_SECONDS);
        assert!(cmd.is_idle());
    }

    #[test]
    fn config_validation() {
        assert!(ChannelControlConfig::default().validate().is_ok());
        let bad = ChannelControlConfig { valve_hysteresis: 0.01, ..ChannelControlConfig::default() };
        assert!(bad.validate().is_err());
        let bad_gains = PidGains { output_limit: 1.5, ..PidGains::default() };
        assert!(bad_gains.validate().is_err());
        let bad_gains = PidGains { kd: -1.0, ..PidGains::default() };
        assert!(bad_gains.validate().is_err());
    }
}
