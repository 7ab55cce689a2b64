//! Firmware-equivalent device: owns every channel's controller and plant
//! state, applies decoded commands between ticks, and runs the 50 Hz control
//! tick.

use thiserror::Error;

use crate::controller::{
    tick_channel, ActuationCommand, ChannelControlConfig, ControllerError, PidState, TICK_SECONDS,
};
use crate::plant::{
    inject_disturbance, read_sensor, step_plant, ChannelPlantState, DisturbanceWindow, PlantError, PlantParams,
    SensorModel, SensorNoise,
};
use crate::protocol::{
    ChannelSel, ErrorCode, FlowCode, Frame, GainsPayload, PingInfo, PressureCode, ProtocolError, Reply, Request,
    PROTOCOL_VERSION,
};
use crate::telemetry::{ChannelTelemetry, TelemetrySnapshot};

/// Upper bound on channels: twelve dual-channel modules.
pub const MAX_CHANNELS: usize = 24;
pub const FIRMWARE_VERSION: (u8, u8, u8) = (0, 1, 0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    #[error("unknown command id 0x{0:02X}")]
    UnknownCommand(u8),
    #[error("channel {channel} out of range (device has {count})")]
    ChannelOutOfRange { channel: usize, count: usize },
    #[error("target {target} kPa outside envelope [{min}, {max}]")]
    TargetOutOfRange { target: f64, min: f64, max: f64 },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("channel count must be 1..={MAX_CHANNELS}, got {0}")]
    BadChannelCount(usize),
    #[error("operation requires simulated mode")]
    NotSimulated,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

impl DeviceError {
    pub fn code(&self) -> ErrorCode {
        match self {
            DeviceError::UnknownCommand(_) => ErrorCode::UnknownCommand,
            DeviceError::Protocol(ProtocolError::UnknownCommand(_)) => ErrorCode::UnknownCommand,
            DeviceError::ChannelOutOfRange { .. } => ErrorCode::ChannelOutOfRange,
            DeviceError::TargetOutOfRange { .. } => ErrorCode::TargetOutOfRange,
            DeviceError::LengthMismatch { .. } | DeviceError::Protocol(_) => ErrorCode::MalformedPayload,
            DeviceError::Controller(_) | DeviceError::BadChannelCount(_) => ErrorCode::InvalidParameter,
            DeviceError::Plant(PlantError::OverlappingDisturbance { .. }) => ErrorCode::OverlappingDisturbance,
            DeviceError::Plant(PlantError::InvalidParameter(_)) => ErrorCode::InvalidParameter,
            DeviceError::Plant(PlantError::NonFiniteState { .. }) => ErrorCode::Internal,
            DeviceError::NotSimulated => ErrorCode::NotSimulated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Simulated,
    ExternalPlant,
}

/// Sensor/actuator boundary used instead of the built-in plant model, e.g.
/// a hardware driver or a foreign simulator.
pub trait ExternalPlant: Send {
    fn read_pressure(&mut self, channel: usize) -> f64;
    /// Writes the command to the channel's drivers and advances by `dt`.
    fn apply(&mut self, channel: usize, command: &ActuationCommand, dt: f64) -> Result<(), PlantError>;
    /// Most recent net flow into the chamber, L/min.
    fn flow(&mut self, channel: usize) -> f64;
}

/// Static description of one channel at power-up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSetup {
    pub plant: PlantParams,
    pub control: ChannelControlConfig,
    pub sensor: SensorModel,
    pub initial_pressure: f64,
    pub initial_target: f64,
}

impl Default for ChannelSetup {
    fn default() -> Self {
        Self {
            plant: PlantParams::default(),
            control: ChannelControlConfig::default(),
            sensor: SensorModel::default(),
            initial_pressure: 0.0,
            initial_target: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceConfig {
    pub channels: Vec<ChannelSetup>,
    pub seed: u64,
}

impl DeviceConfig {
    pub fn uniform(count: usize, setup: ChannelSetup) -> Self {
        Self { channels: vec![setup; count], seed: 0 }
    }
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self::uniform(1, ChannelSetup::default())
    }
}

/// Live state of one channel.
#[derive(Debug, Clone)]
pub struct Channel {
    pub target: f64,
    pub pid: PidState,
    pub config: ChannelControlConfig,
    pub plant: ChannelPlantState,
    pub params: PlantParams,
    pub sensor: SensorModel,
    pub command: ActuationCommand,
    pub disturbance: Option<DisturbanceWindow>,
    noise: SensorNoise,
}

impl Channel {
    /// Allowed target range: the pump stall pressures intersected with the
    /// sensor span.
    pub fn envelope(&self) -> (f64, f64) {
        let (lo, hi) = self.params.envelope();
        (lo.max(self.sensor.min), hi.min(self.sensor.max))
    }

    fn telemetry(&self, pressure: f64, flow: f64) -> ChannelTelemetry {
        ChannelTelemetry {
            pressure,
            target: self.target,
            flow,
            inflate_duty: self.command.inflate_counts(),
            deflate_duty: self.command.deflate_counts(),
            valve: self.command.valve(),
            enabled: self.config.enabled,
        }
    }
}

enum Backend {
    Simulated,
    External(Box<dyn ExternalPlant>),
}

pub struct Device {
    channels: Vec<Channel>,
    tick: u64,
    dt: f64,
    backend: Backend,
    last: Option<TelemetrySnapshot>,
}

impl std::fmt::Debug for Device {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Device")
            .field("channels", &self.channels.len())
            .field("tick", &self.tick)
            .field("mode", &self.mode())
            .finish()
    }
}

impl Device {
    pub fn new(config: &DeviceConfig) -> Result<Self, DeviceError> {
        let n = config.channels.len();
        if n == 0 || n > MAX_CHANNELS {
            return Err(DeviceError::BadChannelCount(n));
        }
        let channels = config
            .channels
            .iter()
            .enumerate()
            .map(|(i, setup)| {
                setup.plant.validate()?;
                setup.control.validate()?;
                Ok(Channel {
                    target: setup.initial_target,
                    pid: PidState::default(),
                    config: setup.control,
                    plant: ChannelPlantState::at_pressure(setup.initial_pressure),
                    params: setup.plant,
                    sensor: setup.sensor,
                    command: ActuationCommand::default(),
                    disturbance: None,
                    noise: SensorNoise::new(config.seed, i as u64),
                })
            })
            .collect::<Result<Vec<_>, DeviceError>>()?;
        Ok(Self { channels, tick: 0, dt: TICK_SECONDS, backend: Backend::Simulated, last: None })
    }

    /// Device with `count` channels at the default parameters.
    pub fn simulated(count: usize) -> Result<Self, DeviceError> {
        Self::new(&DeviceConfig::uniform(count, ChannelSetup::default()))
    }

    pub fn with_external_plant(config: &DeviceConfig, plant: Box<dyn ExternalPlant>) -> Result<Self, DeviceError> {
        let mut dev = Self::new(config)?;
        dev.backend = Backend::External(plant);
        Ok(dev)
    }

    pub fn mode(&self) -> Mode {
        match self.backend {
            Backend::Simulated => Mode::Simulated,
            Backend::External(_) => Mode::ExternalPlant,
        }
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Simulated seconds elapsed.
    pub fn sim_time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn channel(&self, index: usize) -> Option<&Channel> {
        self.channels.get(index)
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    fn check_channel(&self, channel: usize) -> Result<(), DeviceError> {
        if channel < self.channels.len() {
            Ok(())
        } else {
            Err(DeviceError::ChannelOutOfRange { channel, count: self.channels.len() })
        }
    }

    fn selected(&self, sel: ChannelSel) -> Result<std::ops::Range<usize>, DeviceError> {
        match sel {
            ChannelSel::All => Ok(0..self.channels.len()),
            ChannelSel::One(c) => {
                let c = usize::from(c);
                self.check_channel(c)?;
                Ok(c..c + 1)
            }
        }
    }

    fn check_target(&self, channel: usize, target: f64) -> Result<(), DeviceError> {
        let (min, max) = self.channels[channel].envelope();
        if target.is_finite() && (min..=max).contains(&target) {
            Ok(())
        } else {
            Err(DeviceError::TargetOutOfRange { target, min, max })
        }
    }

    pub fn set_target(&mut self, channel: usize, target: f64) -> Result<(), DeviceError> {
        self.check_channel(channel)?;
        self.check_target(channel, target)?;
        self.channels[channel].target = target;
        Ok(())
    }

    /// Updates every target at once; nothing changes unless all are valid.
    pub fn set_all_targets(&mut self, targets: &[f64]) -> Result<(), DeviceError> {
        if targets.len() != self.channels.len() {
            return Err(DeviceError::LengthMismatch { expected: self.channels.len(), got: targets.len() });
        }
        for (i, &t) in targets.iter().enumerate() {
            self.check_target(i, t)?;
        }
        for (ch, &t) in self.channels.iter_mut().zip(targets) {
            ch.target = t;
        }
        Ok(())
    }

    pub fn set_enabled(&mut self, sel: ChannelSel, enabled: bool) -> Result<(), DeviceError> {
        for i in self.selected(sel)? {
            let ch = &mut self.channels[i];
            if enabled && !ch.config.enabled {
                ch.pid.reset();
            }
            ch.config.enabled = enabled;
            if !enabled {
                ch.command = ActuationCommand::idle(ch.command.valve());
            }
        }
        Ok(())
    }

    pub fn set_gains(&mut self, sel: ChannelSel, update: &GainsPayload) -> Result<(), DeviceError> {
        let range = self.selected(sel)?;
        for i in range.clone() {
            apply_gains(self.channels[i].config, update).validate()?;
        }
        for i in range {
            let ch = &mut self.channels[i];
            ch.config = apply_gains(ch.config, update);
        }
        Ok(())
    }

    pub fn inject_disturbance(&mut self, channel: usize, flow: f64, duration: f64) -> Result<(), DeviceError> {
        self.require_simulated()?;
        self.check_channel(channel)?;
        let (tick, dt) = (self.tick, self.dt);
        inject_disturbance(&mut self.channels[channel].disturbance, tick, flow, duration, dt)?;
        Ok(())
    }

    pub fn set_leak(&mut self, channel: usize, coefficient: f64) -> Result<(), DeviceError> {
        self.require_simulated()?;
        self.check_channel(channel)?;
        let mut params = self.channels[channel].params;
        params.chamber.leak_coefficient = coefficient;
        params.validate()?;
        self.channels[channel].params = params;
        Ok(())
    }

    fn require_simulated(&self) -> Result<(), DeviceError> {
        match self.backend {
            Backend::Simulated => Ok(()),
            Backend::External(_) => Err(DeviceError::NotSimulated),
        }
    }

    /// Applies one decoded command and builds the acknowledgement.
    pub fn apply_command(&mut self, frame: &Frame) -> Result<Reply, DeviceError> {
        let request = Request::from_frame(frame)?;
        let ack = |data: Vec<u8>| Reply::Ack { command: frame.command_id, channel: frame.channel, data };
        match request {
            Request::Ping => {
                let info = PingInfo {
                    protocol_version: PROTOCOL_VERSION,
                    firmware: FIRMWARE_VERSION,
                    channel_count: self.channels.len() as u8,
                };
                Ok(ack(info.to_bytes().to_vec()))
            }
            Request::SetTarget { channel, target } => {
                self.set_target(usize::from(channel), target.kpa())?;
                Ok(ack(Vec::new()))
            }
            Request::SetAllTargets(codes) => {
                let targets: Vec<f64> = codes.iter().map(|c| c.kpa()).collect();
                self.set_all_targets(&targets)?;
                Ok(ack(Vec::new()))
            }
            Request::ReadPressure(sel) => {
                let data = self
                    .selected(sel)?
                    .flat_map(|i| PressureCode::saturating_from_kpa(self.current_pressure(i)).to_le_bytes())
                    .collect();
                Ok(ack(data))
            }
            Request::ReadFlow(sel) => {
                let data = self
                    .selected(sel)?
                    .flat_map(|i| FlowCode::saturating_from_l_per_min(self.current_flow(i)).to_le_bytes())
                    .collect();
                Ok(ack(data))
            }
            Request::Enable(sel) => {
                self.set_enabled(sel, true)?;
                Ok(ack(Vec::new()))
            }
            Request::Disable(sel) => {
                self.set_enabled(sel, false)?;
                Ok(ack(Vec::new()))
            }
            Request::SetGains { channel, payload } => {
                self.set_gains(channel, &payload)?;
                Ok(ack(Vec::new()))
            }
            // Subscription state lives in the transport session.
            Request::SubscribeTelemetry(_) => Ok(ack(Vec::new())),
            Request::InjectDisturbance { channel, flow, duration_ms } => {
                self.inject_disturbance(usize::from(channel), flow.l_per_min(), f64::from(duration_ms) / 1000.0)?;
                Ok(ack(Vec::new()))
            }
            Request::SetLeak { channel, coefficient_micro } => {
                self.set_leak(usize::from(channel), f64::from(coefficient_micro) / 1e6)?;
                Ok(ack(Vec::new()))
            }
        }
    }

    /// Like [`Device::apply_command`] but folds failures into an `Error` reply.
    pub fn handle_frame(&mut self, frame: &Frame) -> Reply {
        match self.apply_command(frame) {
            Ok(reply) => reply,
            Err(err) => Reply::Error { command: frame.command_id, channel: frame.channel, code: err.code() },
        }
    }

    fn current_pressure(&self, i: usize) -> f64 {
        match &self.last {
            Some(s) => s.channels[i].pressure,
            None => self.channels[i].plant.pressure,
        }
    }

    fn current_flow(&self, i: usize) -> f64 {
        match &self.last {
            Some(s) => s.channels[i].flow,
            None => self.channels[i].plant.last_flow,
        }
    }

    /// Runs one control period over every channel in index order and returns
    /// the post-tick snapshot.
    pub fn tick(&mut self) -> Result<TelemetrySnapshot, DeviceError> {
        let tick = self.tick;
        let dt = self.dt;
        let mut records = Vec::with_capacity(self.channels.len());
        for (i, ch) in self.channels.iter_mut().enumerate() {
            match &mut self.backend {
                Backend::Simulated => {
                    ch.plant.disturbance_flow = ch.disturbance.map_or(0.0, |w| w.flow_at(tick));
                    if ch.disturbance.is_some_and(|w| w.is_expired(tick + 1)) {
                        ch.disturbance = None;
                    }
                    let reading = read_sensor(&ch.plant, &ch.sensor, &mut ch.noise);
                    control(ch, reading, dt);
                    ch.plant = step_plant(&ch.plant, &ch.command, &ch.params, dt)?;
                    records.push(ch.telemetry(ch.plant.pressure, ch.plant.last_flow));
                }
                Backend::External(plant) => {
                    let reading = plant.read_pressure(i);
                    control(ch, reading, dt);
                    plant.apply(i, &ch.command, dt)?;
                    let (pressure, flow) = (plant.read_pressure(i), plant.flow(i));
                    records.push(ch.telemetry(pressure, flow));
                }
            }
        }
        self.tick += 1;
        let snapshot = TelemetrySnapshot { tick: self.tick, channels: records };
        self.last = Some(snapshot.clone());
        Ok(snapshot)
    }

    /// Runs `ticks` control periods and returns the last snapshot.
    pub fn run(&mut self, ticks: u64) -> Result<Option<TelemetrySnapshot>, DeviceError> {
        let mut last = None;
        for _ in 0..ticks {
            last = Some(self.tick()?);
        }
        Ok(last)
    }

    /// Most recent snapshot, or the power-up state before the first tick.
    pub fn snapshot(&self) -> TelemetrySnapshot {
        match &self.last {
            Some(s) => s.clone(),
            None => TelemetrySnapshot {
                tick: self.tick,
                channels: self.channels.iter().map(|c| c.telemetry(c.plant.pressure, c.plant.last_flow)).collect(),
            },
        }
    }
}

fn control(ch: &mut Channel, reading: f64, dt: f64) {
    if ch.config.enabled {
        let (cmd, pid) = tick_channel(reading, ch.target, &ch.config, &ch.pid, ch.command.valve(), dt);
        ch.command = cmd;
        ch.pid = pid;
    } else {
        ch.command = ActuationCommand::idle(ch.command.valve());
    }
}

fn apply_gains(mut config: ChannelControlConfig, update: &GainsPayload) -> ChannelControlConfig {
    config.gains = update.gains;
    if let Some((deadband, hysteresis)) = update.bands {
        config.deadband = deadband;
        config.valve_hysteresis = hysteresis;
    }
    config
}
