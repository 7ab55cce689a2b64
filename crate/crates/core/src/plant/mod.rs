//! Lumped-parameter model of one pneumatic air channel.
//!
//! Each channel has an inflation micro-pump, a deflation micro-pump, a binary
//! solenoid valve that connects exactly one of them to the chamber, and an
//! elastic chamber that may leak to atmosphere. The gas is treated as an
//! isothermal ideal gas, so the gauge pressure `P` evolves as
//!
//! ```text
//! dP/dt = (P_atm + P) * Q_net / (V(P) + c * (P_atm + P)),    V(P) = V0 + c * P
//! ```
//!
//! where `Q_net` is the net volumetric flow into the chamber and `c` is the
//! chamber compliance. The state is advanced with classical RK4, holding the
//! actuation command constant over the step.
//!
//! Units are fixed throughout: kPa gauge, L/min, mL and seconds.

mod disturbance;
mod sensor;

pub use disturbance::{inject_disturbance, DisturbanceWindow};
pub use sensor::{read_sensor, SensorModel, SensorNoise};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ActuationCommand;

/// Standard atmosphere, kPa absolute.
pub const ATMOSPHERIC_KPA: f64 = 101.325;

/// 1 L/min expressed in mL/s.
const ML_PER_S_PER_L_PER_MIN: f64 = 1000.0 / 60.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("plant state became non-finite (pressure {pressure}); check plant parameters")]
    NonFiniteState { pressure: f64 },
    #[error("a disturbance window is already active on this channel until tick {until_tick}")]
    OverlappingDisturbance { until_tick: u64 },
    #[error("invalid plant parameter: {0}")]
    InvalidParameter(&'static str),
}

/// Airflow path selected by the solenoid valve. Only one path is open at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Valve {
    #[default]
    #[serde(rename = "inflate")]
    InflatePath,
    #[serde(rename = "deflate")]
    DeflatePath,
}

/// Linearized diaphragm pump characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpCurve {
    /// Free-flow rate at zero back-pressure, L/min.
    pub max_flow: f64,
    /// Gauge pressure at which the pump stalls, kPa. Positive for the
    /// inflation pump, negative for the deflation pump.
    pub stall_pressure: f64,
}

impl PumpCurve {
    pub const fn inflate_default() -> Self {
        Self { max_flow: 1.7, stall_pressure: 80.0 }
    }

    pub const fn deflate_default() -> Self {
        Self { max_flow: 1.7, stall_pressure: -50.0 }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.max_flow.is_finite() && self.max_flow > 0.0) {
            return Err(PlantError::InvalidParameter("pump max_flow must be > 0"));
        }
        if !self.stall_pressure.is_finite() || self.stall_pressure == 0.0 {
            return Err(PlantError::InvalidParameter("pump stall_pressure must be non-zero"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChamberParams {
    /// Volume at zero gauge pressure, mL.
    pub rest_volume: f64,
    /// Volume growth per kPa, mL/kPa.
    pub compliance: f64,
    /// Leak flow per kPa of gauge pressure, (L/min)/kPa.
    pub leak_coefficient: f64,
}

impl Default for ChamberParams {
    fn default() -> Self {
        Self { rest_volume: 50.0, compliance: 0.1, leak_coefficient: 0.0 }
    }
}

/// Complete parameter set for one simulated channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub inflate: PumpCurve,
    pub deflate: PumpCurve,
    pub chamber: ChamberParams,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            inflate: PumpCurve::inflate_default(),
            deflate: PumpCurve::deflate_default(),
            chamber: ChamberParams::default(),
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        self.inflate.validate()?;
        self.deflate.validate()?;
        if self.inflate.stall_pressure <= 0.0 {
            return Err(PlantError::InvalidParameter("inflation pump must stall at a positive pressure"));
        }
        if self.deflate.stall_pressure >= 0.0 {
            return Err(PlantError::InvalidParameter("deflation pump must stall at a negative pressure"));
        }
        let c = &self.chamber;
        if !(c.rest_volume.is_finite() && c.rest_volume > 0.0) {
            return Err(PlantError::InvalidParameter("rest_volume must be > 0"));
        }
        if !(c.compliance.is_finite() && c.compliance >= 0.0) {
            return Err(PlantError::InvalidParameter("compliance must be >= 0"));
        }
        if !(c.leak_coefficient.is_finite() && c.leak_coefficient >= 0.0) {
            return Err(PlantError::InvalidParameter("leak_coefficient must be >= 0"));
        }
        if self.volume_at(self.deflate.stall_pressure) <= 0.0 {
            return Err(PlantError::InvalidParameter(
                "chamber volume must stay positive down to the deflate stall pressure",
            ));
        }
        Ok(())
    }

    /// Pressure envelope reachable by the pumps, `(deflate stall, inflate stall)`.
    pub fn envelope(&self) -> (f64, f64) {
        (self.deflate.stall_pressure, self.inflate.stall_pressure)
    }

    /// Chamber volume in mL at gauge pressure `pressure`.
    pub fn volume_at(&self, pressure: f64) -> f64 {
        self.chamber.rest_volume + self.chamber.compliance * pressure
    }

    /// Rate of change of gauge pressure (kPa/s) for a net inflow in L/min.
    pub fn pressure_rate(&self, pressure: f64, net_flow: f64) -> f64 {
        let absolute = ATMOSPHERIC_KPA + pressure;
        let inflow = net_flow * ML_PER_S_PER_L_PER_MIN;
        absolute * inflow / (self.volume_at(pressure) + self.chamber.compliance * absolute)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelPlantState {
    /// Gauge pressure, kPa.
    pub pressure: f64,
    pub valve: Valve,
    /// Mean net flow into the chamber over the last step, L/min.
    pub last_flow: f64,
    /// Externally injected flow, L/min (positive = into the chamber).
    pub disturbance_flow: f64,
}

impl ChannelPlantState {
    pub fn at_pressure(pressure: f64) -> Self {
        Self { pressure, ..Self::default() }
    }
}

/// Flow delivered by a pump at the given duty against `pressure`, L/min.
///
/// The curve is linear in back-pressure, reaching zero at the stall pressure.
/// The pressure factor is capped at 1 so that a pump assisted by the chamber
/// pressure never exceeds its free-flow rating.
pub fn pump_flow(curve: &PumpCurve, duty: f64, pressure: f64) -> f64 {
    let factor = (1.0 - pressure / curve.stall_pressure).clamp(0.0, 1.0);
    duty * curve.max_flow * factor
}

/// Signed flow contributed by whichever pump the command connects, L/min.
pub fn pump_contribution(pressure: f64, cmd: &ActuationCommand, params: &PlantParams) -> f64 {
    match cmd.valve() {
        Valve::InflatePath => pump_flow(&params.inflate, cmd.inflate_duty(), pressure),
        Valve::DeflatePath => -pump_flow(&params.deflate, cmd.deflate_duty(), pressure),
    }
}

fn flow_at(pressure: f64, disturbance: f64, cmd: &ActuationCommand, params: &PlantParams) -> f64 {
    let leak = params.chamber.leak_coefficient * pressure;
    pump_contribution(pressure, cmd, params) - leak + disturbance
}

/// Net flow into the chamber for the current state, L/min.
pub fn net_flow(state: &ChannelPlantState, cmd: &ActuationCommand, params: &PlantParams) -> f64 {
    flow_at(state.pressure, state.disturbance_flow, cmd, params)
}

/// Advances one channel by `dt` seconds with `cmd` held constant.
pub fn step_plant(
    state: &ChannelPlantState,
    cmd: &ActuationCommand,
    params: &PlantParams,
    dt: f64,
) -> Result<ChannelPlantState, PlantError> {
    debug_assert!(dt > 0.0);
    let dist = state.disturbance_flow;
    let p0 = state.pressure;

    let q1 = flow_at(p0, dist, cmd, params);
    let k1 = params.pressure_rate(p0, q1);
    let p1 = p0 + 0.5 * dt * k1;
    let q2 = flow_at(p1, dist, cmd, params);
    let k2 = params.pressure_rate(p1, q2);
    let p2 = p0 + 0.5 * dt * k2;
    let q3 = flow_at(p2, dist, cmd, params);
    let k3 = params.pressure_rate(p2, q3);
    let p3 = p0 + dt * k3;
    let q4 = flow_at(p3, dist, cmd, params);
    let k4 = params.pressure_rate(p3, q4);

    let pressure = p0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if !pressure.is_finite() || pressure + ATMOSPHERIC_KPA <= 0.0 {
        return Err(PlantError::NonFiniteState { pressure });
    }
    Ok(ChannelPlantState {
        pressure,
        valve: cmd.valve(),
        last_flow: (q1 + 2.0 * q2 + 2.0 * q3 + q4) / 6.0,
        disturbance_flow: dist,
    })
}
