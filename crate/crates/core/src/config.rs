//! TOML device configuration.
//!
//! Every key is optional; missing keys take the built-in defaults.
//!
//! ```toml
//! channels = 10
//! seed = 7
//! telemetry_decimation = 2
//!
//! [plant]
//! rest_volume = 50.0        # mL
//! compliance = 0.1          # mL/kPa
//! leak_coefficient = 0.0    # (L/min)/kPa
//! inflate = { max_flow = 1.7, stall_pressure = 80.0 }
//! deflate = { max_flow = 1.7, stall_pressure = -50.0 }
//!
//! [sensor]
//! min = -103.4
//! max = 103.4
//! quantization = 0.0
//! noise_std = 0.0
//!
//! [controller]
//! kp = 0.3
//! ki = 0.6
//! kd = 0.002
//! output_limit = 1.0
//! integral_limit = 15.0
//! deadband = 0.05
//! valve_hysteresis = 0.2
//!
//! [[channel]]
//! index = 3
//! leak_coefficient = 0.02
//! kp = 0.25
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ChannelControlConfig, PidGains};
use crate::device::{ChannelSetup, DeviceConfig, MAX_CHANNELS};
use crate::plant::{ChamberParams, PlantParams, PumpCurve, SensorModel};

pub const DEFAULT_TELEMETRY_DECIMATION: u32 = 2;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub rest_volume: f64,
    pub compliance: f64,
    pub leak_coefficient: f64,
    pub inflate: PumpCurve,
    pub deflate: PumpCurve,
    pub initial_pressure: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let c = ChamberParams::default();
        Self {
            rest_volume: c.rest_volume,
            compliance: c.compliance,
            leak_coefficient: c.leak_coefficient,
            inflate: PumpCurve::inflate_default(),
            deflate: PumpCurve::deflate_default(),
            initial_pressure: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub output_limit: f64,
    pub integral_limit: f64,
    pub deadband: f64,
    pub valve_hysteresis: f64,
    pub enabled: bool,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let c = ChannelControlConfig::default();
        Self {
            kp: c.gains.kp,
            ki: c.gains.ki,
            kd: c.gains.kd,
            output_limit: c.gains.output_limit,
            integral_limit: c.gains.integral_limit,
            deadband: c.deadband,
            valve_hysteresis: c.valve_hysteresis,
            enabled: c.enabled,
        }
    }
}

/// Per-channel overrides; unset fields inherit the shared sections.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelOverride {
    pub index: usize,
    pub rest_volume: Option<f64>,
    pub compliance: Option<f64>,
    pub leak_coefficient: Option<f64>,
    pub initial_pressure: Option<f64>,
    pub kp: Option<f64>,
    pub ki: Option<f64>,
    pub kd: Option<f64>,
    pub deadband: Option<f64>,
    pub valve_hysteresis: Option<f64>,
    pub enabled: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub channels: usize,
    pub seed: u64,
    pub telemetry_decimation: u32,
    pub plant: PlantSection,
    pub sensor: SensorModel,
    pub controller: ControllerSection,
    #[serde(rename = "channel")]
    pub overrides: Vec<ChannelOverride>,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            channels: 1,
            seed: 0,
            telemetry_decimation: DEFAULT_TELEMETRY_DECIMATION,
            plant: PlantSection::default(),
            sensor: SensorModel::default(),
            controller: ControllerSection::default(),
            overrides: Vec::new(),
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ConfigFile = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    fn check(&self) -> Result<(), ConfigError> {
        if self.channels == 0 || self.channels > MAX_CHANNELS {
            return Err(ConfigError::Invalid(format!("channels must be 1..={MAX_CHANNELS}")));
        }
        if self.telemetry_decimation == 0 {
            return Err(ConfigError::Invalid("telemetry_decimation must be >= 1".into()));
        }
        if let Some(o) = self.overrides.iter().find(|o| o.index >= self.channels) {
            return Err(ConfigError::Invalid(format!("override for channel {} beyond channel count", o.index)));
        }
        for i in 0..self.channels {
            let s = self.channel_setup(i);
            s.plant.validate().map_err(|e| ConfigError::Invalid(format!("channel {i}: {e}")))?;
            s.control.validate().map_err(|e| ConfigError::Invalid(format!("channel {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn channel_setup(&self, index: usize) -> ChannelSetup {
        let p = &self.plant;
        let c = &self.controller;
        let mut setup = ChannelSetup {
            plant: PlantParams {
                inflate: p.inflate,
                deflate: p.deflate,
                chamber: ChamberParams {
                    rest_volume: p.rest_volume,
                    compliance: p.compliance,
                    leak_coefficient: p.leak_coefficient,
                },
            },
            control: ChannelControlConfig {
                gains: PidGains {
                    kp: c.kp,
                    ki: c.ki,
                    kd: c.kd,
                    output_limit: c.output_limit,
                    integral_limit: c.integral_limit,
                },
                deadband: c.deadband,
                valve_hysteresis: c.valve_hysteresis,
                enabled: c.enabled,
            },
            sensor: self.sensor,
            initial_pressure: p.initial_pressure,
            initial_target: 0.0,
        };
        for o in self.overrides.iter().filter(|o| o.index == index) {
            let chamber = &mut setup.plant.chamber;
            let gains = &mut setup.control.gains;
            set(&mut chamber.rest_volume, o.rest_volume);
            set(&mut chamber.compliance, o.compliance);
            set(&mut chamber.leak_coefficient, o.leak_coefficient);
            set(&mut setup.initial_pressure, o.initial_pressure);
            set(&mut gains.kp, o.kp);
            set(&mut gains.ki, o.ki);
            set(&mut gains.kd, o.kd);
            set(&mut setup.control.deadband, o.deadband);
            set(&mut setup.control.valve_hysteresis, o.valve_hysteresis);
            set(&mut setup.control.enabled, o.enabled);
        }
        setup
    }

    pub fn device_config(&self) -> DeviceConfig {
        DeviceConfig { channels: (0..self.channels).map(|i| self.channel_setup(i)).collect(), seed: self.seed }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        let cfg = ConfigFile::parse("").unwrap();
        assert_eq!(cfg, ConfigFile::default());
        let setup = cfg.channel_setup(0);
        assert_eq!(setup.plant, PlantParams::default());
        assert_eq!(setup.control, ChannelControlConfig::default());
    }

    #[test]
    fn doc_example_parses() {
        let text = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        let cfg = ConfigFile::parse(&text).unwrap();
        assert_eq!(cfg.channels, 10);
        let dev = cfg.device_config();
        assert_eq!(dev.channels.len(), 10);
        assert_eq!(dev.seed, 7);
        assert_eq!(dev.channels[3].plant.chamber.leak_coefficient, 0.02);
        assert_eq!(dev.channels[3].control.gains.kp, 0.25);
        assert_eq!(dev.channels[2].plant.chamber.leak_coefficient, 0.0);
        assert_eq!(dev.channels[2].control.gains.kp, 0.3);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ConfigFile::parse("channels = 0").is_err());
        assert!(ConfigFile::parse("channels = 25").is_err());
        assert!(ConfigFile::parse("telemetry_decimation = 0").is_err());
        assert!(ConfigFile::parse("[plant]\nrest_volume = -1.0").is_err());
        assert!(ConfigFile::parse("[controller]\noutput_limit = 0.0").is_err());
        assert!(ConfigFile::parse("channels = 2\n[[channel]]\nindex = 2").is_err());
        assert!(ConfigFile::parse("bogus = 1").is_err());
    }

    #[test]
    fn sensor_section() {
        let cfg = ConfigFile::parse("[sensor]\nmin = 0.0\nmax = 103.4\nquantization = 0.01").unwrap();
        assert_eq!(cfg.sensor.min, 0.0);
        assert_eq!(cfg.sensor.quantization, 0.01);
    }
}
