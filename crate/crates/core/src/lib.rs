//! Software twin of the OpenPneu multi-channel pneumatic platform: chamber
//! physics, the per-channel pressure controller, the serial wire protocol and
//! the firmware-equivalent device loop.

pub mod config;
pub mod controller;
pub mod device;
pub mod plant;
pub mod protocol;
pub mod scenario;
pub mod telemetry;

pub use controller::{ActuationCommand, ChannelControlConfig, Duty, PidGains, PidState};
pub use device::{ChannelSetup, Device, DeviceConfig, DeviceError, ExternalPlant, Mode};
pub use plant::{ChannelPlantState, PlantParams, SensorModel, Valve};
pub use telemetry::{ChannelTelemetry, TelemetrySnapshot};
