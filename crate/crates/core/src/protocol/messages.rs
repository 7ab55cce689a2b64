//! Typed views of command, reply and error frames.

use crate::controller::PidGains;

use super::{CommandId, FlowCode, Frame, PressureCode, ProtocolError, BROADCAST_CHANNEL, MAX_PAYLOAD};

/// Fixed-point scale for gains and leak coefficients on the wire.
const MICRO: f64 = 1_000_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelSel {
    One(u8),
    All,
}

impl ChannelSel {
    pub fn from_byte(b: u8) -> Self {
        if b == BROADCAST_CHANNEL {
            ChannelSel::All
        } else {
            ChannelSel::One(b)
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            ChannelSel::One(c) => c,
            ChannelSel::All => BROADCAST_CHANNEL,
        }
    }
}

/// Gains update, optionally with a new `(deadband, valve_hysteresis)` pair in kPa.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainsPayload {
    pub gains: PidGains,
    pub bands: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Ping,
    SetTarget {
        channel: u8,
        target: PressureCode,
    },
    SetAllTargets(Vec<PressureCode>),
    ReadPressure(ChannelSel),
    ReadFlow(ChannelSel),
    Enable(ChannelSel),
    Disable(ChannelSel),
    SetGains {
        channel: ChannelSel,
        payload: GainsPayload,
    },
    SubscribeTelemetry(bool),
    InjectDisturbance {
        channel: u8,
        flow: FlowCode,
        duration_ms: u16,
    },
    /// Coefficient in micro-(L/min)/kPa.
    SetLeak {
        channel: u8,
        coefficient_micro: u32,
    },
}

fn malformed(command: CommandId, reason: &'static str) -> ProtocolError {
    ProtocolError::MalformedPayload { command, reason }
}

fn to_micro(v: f64) -> u32 {
    (v * MICRO).round().clamp(0.0, f64::from(u32::MAX)) as u32
}

fn from_micro(v: u32) -> f64 {
    f64::from(v) / MICRO
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

impl Request {
    pub fn command(&self) -> CommandId {
        match self {
            Request::Ping => CommandId::Ping,
            Request::SetTarget { .. } => CommandId::SetTarget,
            Request::SetAllTargets(_) => CommandId::SetAllTargets,
            Request::ReadPressure(_) => CommandId::ReadPressure,
            Request::ReadFlow(_) => CommandId::ReadFlow,
            Request::Enable(_) => CommandId::Enable,
            Request::Disable(_) => CommandId::Disable,
            Request::SetGains { .. } => CommandId::SetGains,
            Request::SubscribeTelemetry(_) => CommandId::SubscribeTelemetry,
            Request::InjectDisturbance { .. } => CommandId::InjectDisturbance,
            Request::SetLeak { .. } => CommandId::SetLeak,
        }
    }

    /// Whether the request changes device state (and so needs the commander role).
    pub fn is_mutating(&self) -> bool {
        !matches!(
            self,
            Request::Ping | Request::ReadPressure(_) | Request::ReadFlow(_) | Request::SubscribeTelemetry(_)
        )
    }

    pub fn channel_byte(&self) -> u8 {
        match self {
            Request::Ping | Request::SubscribeTelemetry(_) => 0,
            Request::SetTarget { channel, .. }
            | Request::InjectDisturbance { channel, .. }
            | Request::SetLeak { channel, .. } => *channel,
            Request::SetAllTargets(_) => BROADCAST_CHANNEL,
            Request::ReadPressure(sel)
            | Request::ReadFlow(sel)
            | Request::Enable(sel)
            | Request::Disable(sel)
            | Request::SetGains { channel: sel, .. } => sel.to_byte(),
        }
    }

    pub fn to_frame(&self) -> Result<Frame, ProtocolError> {
        let mut payload = Vec::new();
        match self {
            Request::Ping
            | Request::ReadPressure(_)
            | Request::ReadFlow(_)
            | Request::Enable(_)
            | Request::Disable(_) => {}
            Request::SetTarget { target, .. } => payload.extend_from_slice(&target.to_le_bytes()),
            Request::SetAllTargets(targets) => {
                for t in targets {
                    payload.extend_from_slice(&t.to_le_bytes());
                }
            }
            Request::SetGains { payload: g, .. } => {
                for v in [g.gains.kp, g.gains.ki, g.gains.kd, g.gains.output_limit, g.gains.integral_limit] {
                    payload.extend_from_slice(&to_micro(v).to_le_bytes());
                }
                if let Some((db, hy)) = g.bands {
                    payload.extend_from_slice(&PressureCode::from_kpa(db)?.to_le_bytes());
                    payload.extend_from_slice(&PressureCode::from_kpa(hy)?.to_le_bytes());
                }
            }
            Request::SubscribeTelemetry(on) => payload.push(u8::from(*on)),
            Request::InjectDisturbance { flow, duration_ms, .. } => {
                payload.extend_from_slice(&flow.to_le_bytes());
                payload.extend_from_slice(&duration_ms.to_le_bytes());
            }
            Request::SetLeak { coefficient_micro, .. } => payload.extend_from_slice(&coefficient_micro.to_le_bytes()),
        }
        Frame::new(self.command(), self.channel_byte(), payload)
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, ProtocolError> {
        let command = frame.command()?;
        let p = &frame.payload;
        let sel = ChannelSel::from_byte(frame.channel);
        let expect_empty = |req: Request| {
            if p.is_empty() {
                Ok(req)
            } else {
                Err(malformed(command, "expected empty payload"))
            }
        };
        match command {
            CommandId::Ping => expect_empty(Request::Ping),
            CommandId::ReadPressure => expect_empty(Request::ReadPressure(sel)),
            CommandId::ReadFlow => expect_empty(Request::ReadFlow(sel)),
            CommandId::Enable => expect_empty(Request::Enable(sel)),
            CommandId::Disable => expect_empty(Request::Disable(sel)),
            CommandId::SetTarget => {
                let bytes: [u8; 2] = p.as_slice().try_into().map_err(|_| malformed(command, "expected 2 bytes"))?;
                Ok(Request::SetTarget { channel: frame.channel, target: PressureCode::from_le_bytes(bytes) })
            }
            CommandId::SetAllTargets => {
                if p.is_empty() || !p.len().is_multiple_of(2) {
                    return Err(malformed(command, "expected a non-empty list of pressure codes"));
                }
                Ok(Request::SetAllTargets(p.chunks(2).map(|c| PressureCode::from_le_bytes([c[0], c[1]])).collect()))
            }
            CommandId::SetGains => {
                if p.len() != 20 && p.len() != 24 {
                    return Err(malformed(command, "expected 20 or 24 bytes"));
                }
                let gains = PidGains {
                    kp: from_micro(u32_at(p, 0)),
                    ki: from_micro(u32_at(p, 4)),
                    kd: from_micro(u32_at(p, 8)),
                    output_limit: from_micro(u32_at(p, 12)),
                    integral_limit: from_micro(u32_at(p, 16)),
                };
                let bands = (p.len() == 24).then(|| {
                    (
                        PressureCode::from_le_bytes([p[20], p[21]]).kpa(),
                        PressureCode::from_le_bytes([p[22], p[23]]).kpa(),
                    )
                });
                Ok(Request::SetGains { channel: sel, payload: GainsPayload { gains, bands } })
            }
            CommandId::SubscribeTelemetry => match p.as_slice() {
                [flag] => Ok(Request::SubscribeTelemetry(*flag != 0)),
                _ => Err(malformed(command, "expected 1 byte")),
            },
            CommandId::InjectDisturbance => match p.as_slice() {
                [a, b, c, d] => Ok(Request::InjectDisturbance {
                    channel: frame.channel,
                    flow: FlowCode::from_le_bytes([*a, *b]),
                    duration_ms: u16::from_le_bytes([*c, *d]),
                }),
                _ => Err(malformed(command, "expected 4 bytes")),
            },
            CommandId::SetLeak => {
                if p.len() != 4 {
                    return Err(malformed(command, "expected 4 bytes"));
                }
                Ok(Request::SetLeak { channel: frame.channel, coefficient_micro: u32_at(p, 0) })
            }
            CommandId::Reply | CommandId::Telemetry | CommandId::Error => {
                Err(ProtocolError::UnknownCommand(frame.command_id))
            }
        }
    }
}

/// Device-side error codes carried in `Error` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ErrorCode {
    UnknownCommand = 0x01,
    ChannelOutOfRange = 0x02,
    TargetOutOfRange = 0x03,
    MalformedPayload = 0x04,
    InvalidParameter = 0x05,
    NotCommander = 0x06,
    OverlappingDisturbance = 0x07,
    NotSimulated = 0x08,
    Internal = 0xFF,
}

impl ErrorCode {
    pub fn from_u8(v: u8) -> Self {
        match v {
            0x01 => ErrorCode::UnknownCommand,
            0x02 => ErrorCode::ChannelOutOfRange,
            0x03 => ErrorCode::TargetOutOfRange,
            0x04 => ErrorCode::MalformedPayload,
            0x05 => ErrorCode::InvalidParameter,
            0x06 => ErrorCode::NotCommander,
            0x07 => ErrorCode::OverlappingDisturbance,
            0x08 => ErrorCode::NotSimulated,
            _ => ErrorCode::Internal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PingInfo {
    pub protocol_version: u8,
    pub firmware: (u8, u8, u8),
    pub channel_count: u8,
}

impl PingInfo {
    pub fn to_bytes(self) -> [u8; 5] {
        [self.protocol_version, self.firmware.0, self.firmware.1, self.firmware.2, self.channel_count]
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        match b {
            [v, a, b, c, n] => Some(Self { protocol_version: *v, firmware: (*a, *b, *c), channel_count: *n }),
            _ => None,
        }
    }
}

/// Device answer to a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Ack { command: u8, channel: u8, data: Vec<u8> },
    Error { command: u8, channel: u8, code: ErrorCode },
}

impl Reply {
    pub fn command(&self) -> u8 {
        match self {
            Reply::Ack { command, .. } | Reply::Error { command, .. } => *command,
        }
    }

    pub fn channel(&self) -> u8 {
        match self {
            Reply::Ack { channel, .. } | Reply::Error { channel, .. } => *channel,
        }
    }

    pub fn to_frame(&self) -> Frame {
        match self {
            Reply::Ack { command, channel, data } => {
                let mut payload = Vec::with_capacity(1 + data.len());
                payload.push(*command);
                payload.extend_from_slice(&data[..data.len().min(MAX_PAYLOAD - 1)]);
                Frame { command_id: CommandId::Reply.as_u8(), channel: *channel, payload }
            }
            Reply::Error { command, channel, code } => {
                Frame { command_id: CommandId::Error.as_u8(), channel: *channel, payload: vec![*command, *code as u8] }
            }
        }
    }

    pub fn from_frame(frame: &Frame) -> Option<Self> {
        match (frame.command().ok()?, frame.payload.as_slice()) {
            (CommandId::Reply, [command, data @ ..]) => {
                Some(Reply::Ack { command: *command, channel: frame.channel, data: data.to_vec() })
            }
            (CommandId::Error, [command, code]) => {
                Some(Reply::Error { command: *command, channel: frame.channel, code: ErrorCode::from_u8(*code) })
            }
            _ => None,
        }
    }

    /// Pressure codes carried by a `ReadPressure` acknowledgement.
    pub fn pressures(&self) -> Vec<f64> {
        match self {
            Reply::Ack { data, .. } => {
                data.chunks_exact(2).map(|c| PressureCode::from_le_bytes([c[0], c[1]]).kpa()).collect()
            }
            Reply::Error { .. } => Vec::new(),
        }
    }

    /// Flow codes carried by a `ReadFlow` acknowledgement.
    pub fn flows(&self) -> Vec<f64> {
        match self {
            Reply::Ack { data, .. } => {
                data.chunks_exact(2).map(|c| FlowCode::from_le_bytes([c[0], c[1]]).l_per_min()).collect()
            }
            Reply::Error { .. } => Vec::new(),
        }
    }
}
