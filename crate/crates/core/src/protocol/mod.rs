//! Binary instruction set shared by the device and the host.
//!
//! ```text
//! +------+------------+---------+--------+-------------+-------+
//! | 0xAA | command_id | channel | length | payload ... |  crc  |
//! +------+------------+---------+--------+-------------+-------+
//!    1         1           1        1       0..=64         1
//! ```
//!
//! The CRC is CRC-8 (poly 0x07, init 0x00) over `command_id..payload`.
//! Multi-byte integers are little-endian. See `docs/protocol.md` for the full
//! byte layout of every message.

mod codes;
mod crc;
mod decoder;
mod messages;
mod telemetry;

pub use codes::{FlowCode, PressureCode};
pub use crc::{crc8, crc8_update};
pub use decoder::{DecodeError, Decoder};
pub use messages::{ChannelSel, ErrorCode, GainsPayload, PingInfo, Reply, Request};
pub use telemetry::{encode_telemetry, TelemetryAssembler, CHANNELS_PER_TELEMETRY_FRAME};

use thiserror::Error;

pub const SOF: u8 = 0xAA;
pub const MAX_PAYLOAD: usize = 64;
/// Header bytes preceding the payload: SOF, command id, channel, length.
pub const HEADER_LEN: usize = 4;
pub const PROTOCOL_VERSION: u8 = 1;
/// Channel byte addressing every channel at once.
pub const BROADCAST_CHANNEL: u8 = 0xFF;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("payload of {0} bytes exceeds the 64-byte limit")]
    PayloadTooLarge(usize),
    #[error("value {0} kPa is outside the pressure code range")]
    PressureOutOfRange(String),
    #[error("value {0} L/min is outside the flow code range")]
    FlowOutOfRange(String),
    #[error("unknown command id 0x{0:02X}")]
    UnknownCommand(u8),
    #[error("malformed payload for {command:?}: {reason}")]
    MalformedPayload { command: CommandId, reason: &'static str },
    #[error("bad telemetry frame: {0}")]
    BadTelemetry(&'static str),
}

/// Stable command identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum CommandId {
    Ping = 0x01,
    SetTarget = 0x02,
    SetAllTargets = 0x03,
    ReadPressure = 0x04,
    ReadFlow = 0x05,
    Enable = 0x06,
    Disable = 0x07,
    SetGains = 0x08,
    SubscribeTelemetry = 0x09,
    Reply = 0x0A,
    Telemetry = 0x0B,
    Error = 0x0C,
    /// Simulation only: schedule an external flow pulse on a channel.
    InjectDisturbance = 0x10,
    /// Simulation only: change a channel's leak coefficient.
    SetLeak = 0x11,
}

impl CommandId {
    pub const ALL: [CommandId; 14] = [
        CommandId::Ping,
        CommandId::SetTarget,
        CommandId::SetAllTargets,
        CommandId::ReadPressure,
        CommandId::ReadFlow,
        CommandId::Enable,
        CommandId::Disable,
        CommandId::SetGains,
        CommandId::SubscribeTelemetry,
        CommandId::Reply,
        CommandId::Telemetry,
        CommandId::Error,
        CommandId::InjectDisturbance,
        CommandId::SetLeak,
    ];

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for CommandId {
    type Error = ProtocolError;

    fn try_from(value: u8) -> Result<Self, ProtocolError> {
        CommandId::ALL.iter().copied().find(|id| id.as_u8() == value).ok_or(ProtocolError::UnknownCommand(value))
    }
}

/// One protocol message. The command id is kept raw so that frames with ids
/// unknown to this build still decode and can be answered with an error.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    pub command_id: u8,
    pub channel: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(command: CommandId, channel: u8, payload: Vec<u8>) -> Result<Self, ProtocolError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(ProtocolError::PayloadTooLarge(payload.len()));
        }
        Ok(Self { command_id: command.as_u8(), channel, payload })
    }

    pub fn command(&self) -> Result<CommandId, ProtocolError> {
        CommandId::try_from(self.command_id)
    }

    pub fn encode(&self) -> Result<Vec<u8>, ProtocolError> {
        encode_frame(self.command_id, self.channel, &self.payload)
    }

    /// Size on the wire.
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + 1
    }
}

/// Serializes one frame.
pub fn encode_frame(command_id: u8, channel: u8, payload: &[u8]) -> Result<Vec<u8>, ProtocolError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(ProtocolError::PayloadTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 1);
    out.extend_from_slice(&[SOF, command_id, channel, payload.len() as u8]);
    out.extend_from_slice(payload);
    out.push(crc8(&out[1..]));
    Ok(out)
}
