//! Telemetry packets.
//!
//! Each frame carries the tick (`u32` LE) followed by up to five 9-byte channel
//! records:
//!
//! ```text
//! pressure i16 | target i16 | flow i16 | duty u16 | flags u8
//! ```
//!
//! `duty` is the PWM count of the pump on the valve's path; flags bit 0 is the
//! valve (1 = deflate path) and bit 1 is the enabled flag. Snapshots with more
//! than five channels are split across frames; the header channel byte holds
//! the part index in its high nibble and the part count in its low nibble.

use crate::controller::{ActuationCommand, Duty};
use crate::plant::Valve;
use crate::telemetry::{ChannelTelemetry, TelemetrySnapshot};

use super::{CommandId, FlowCode, Frame, PressureCode, ProtocolError};

pub const CHANNELS_PER_TELEMETRY_FRAME: usize = 5;
const RECORD_LEN: usize = 9;
const TICK_LEN: usize = 4;
const FLAG_DEFLATE: u8 = 0b01;
const FLAG_ENABLED: u8 = 0b10;
const MAX_PARTS: usize = 15;

/// Splits a snapshot into telemetry frames. Ticks are sent modulo 2^32.
pub fn encode_telemetry(snapshot: &TelemetrySnapshot) -> Vec<Frame> {
    let chunks: Vec<&[ChannelTelemetry]> = if snapshot.channels.is_empty() {
        vec![&[]]
    } else {
        snapshot.channels.chunks(CHANNELS_PER_TELEMETRY_FRAME).collect()
    };
    assert!(chunks.len() <= MAX_PARTS, "too many channels for telemetry framing");
    let count = chunks.len() as u8;
    let tick = (snapshot.tick as u32).to_le_bytes();
    chunks
        .iter()
        .enumerate()
        .map(|(index, chunk)| {
            let mut payload = Vec::with_capacity(TICK_LEN + chunk.len() * RECORD_LEN);
            payload.extend_from_slice(&tick);
            for ch in chunk.iter() {
                encode_record(ch, &mut payload);
            }
            Frame { command_id: CommandId::Telemetry.as_u8(), channel: ((index as u8) << 4) | count, payload }
        })
        .collect()
}

fn encode_record(ch: &ChannelTelemetry, out: &mut Vec<u8>) {
    let duty = match ch.valve {
        Valve::InflatePath => ch.inflate_duty,
        Valve::DeflatePath => ch.deflate_duty,
    };
    let mut flags = 0;
    if ch.valve == Valve::DeflatePath {
        flags |= FLAG_DEFLATE;
    }
    if ch.enabled {
        flags |= FLAG_ENABLED;
    }
    out.extend_from_slice(&PressureCode::saturating_from_kpa(ch.pressure).to_le_bytes());
    out.extend_from_slice(&PressureCode::saturating_from_kpa(ch.target).to_le_bytes());
    out.extend_from_slice(&FlowCode::saturating_from_l_per_min(ch.flow).to_le_bytes());
    out.extend_from_slice(&duty.counts().to_le_bytes());
    out.push(flags);
}

fn decode_record(rec: &[u8]) -> ChannelTelemetry {
    let flags = rec[8];
    let valve = if flags & FLAG_DEFLATE != 0 { Valve::DeflatePath } else { Valve::InflatePath };
    let duty = Duty::from_counts(u16::from_le_bytes([rec[6], rec[7]]));
    let cmd = ActuationCommand::on_path(valve, duty);
    ChannelTelemetry {
        pressure: PressureCode::from_le_bytes([rec[0], rec[1]]).kpa(),
        target: PressureCode::from_le_bytes([rec[2], rec[3]]).kpa(),
        flow: FlowCode::from_le_bytes([rec[4], rec[5]]).l_per_min(),
        inflate_duty: cmd.inflate_counts(),
        deflate_duty: cmd.deflate_counts(),
        valve,
        enabled: flags & FLAG_ENABLED != 0,
    }
}

/// Rebuilds snapshots from telemetry frames.
///
/// Parts of one tick may arrive in any order. A part for a new tick discards
/// any incomplete earlier tick, which is counted in [`TelemetryAssembler::incomplete`].
#[derive(Debug, Default)]
pub struct TelemetryAssembler {
    tick: u32,
    parts: Vec<Option<Vec<ChannelTelemetry>>>,
    incomplete: u64,
}

impl TelemetryAssembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of snapshots abandoned before all their parts arrived.
    pub fn incomplete(&self) -> u64 {
        self.incomplete
    }

    pub fn push(&mut self, frame: &Frame) -> Result<Option<TelemetrySnapshot>, ProtocolError> {
        if frame.command_id != CommandId::Telemetry.as_u8() {
            return Err(ProtocolError::BadTelemetry("not a telemetry frame"));
        }
        let index = usize::from(frame.channel >> 4);
        let count = usize::from(frame.channel & 0x0F);
        if count == 0 || index >= count {
            return Err(ProtocolError::BadTelemetry("invalid part index"));
        }
        let body = frame.payload.get(TICK_LEN..).ok_or(ProtocolError::BadTelemetry("missing tick"))?;
        if body.len() % RECORD_LEN != 0 || body.len() / RECORD_LEN > CHANNELS_PER_TELEMETRY_FRAME {
            return Err(ProtocolError::BadTelemetry("record length"));
        }
        let tick = u32::from_le_bytes([frame.payload[0], frame.payload[1], frame.payload[2], frame.payload[3]]);
        let records: Vec<ChannelTelemetry> = body.chunks(RECORD_LEN).map(decode_record).collect();

        if self.parts.is_empty() || self.tick != tick || self.parts.len() != count {
            if self.parts.iter().any(Option::is_some) {
                self.incomplete += 1;
            }
            self.tick = tick;
            self.parts = vec![None; count];
        }
        self.parts[index] = Some(records);
        if self.parts.iter().all(Option::is_some) {
            let channels = self.parts.drain(..).flatten().flatten().collect();
            return Ok(Some(TelemetrySnapshot { tick: u64::from(tick), channels }));
        }
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel(i: usize) -> ChannelTelemetry {
        let cmd = if i.is_multiple_of(2) {
            ActuationCommand::inflate(Duty::from_counts(2048 + i as u16))
        } else {
            ActuationCommand::deflate(Duty::from_counts(100 * i as u16))
        };
        ChannelTelemetry {
            pressure: -12.5 + i as f64,
            target: 30.0,
            flow: f64::from(425 * i as i32 - 1275) / 1000.0,
            inflate_duty: cmd.inflate_counts(),
            deflate_duty: cmd.deflate_counts(),
            valve: cmd.valve(),
            enabled: i != 4,
        }
    }

    fn snapshot(n: usize) -> TelemetrySnapshot {
        TelemetrySnapshot { tick: 500, channels: (0..n).map(channel).collect() }
    }

    fn reassemble(frames: &[Frame]) -> Vec<TelemetrySnapshot> {
        let mut asm = TelemetryAssembler::new();
        frames.iter().filter_map(|f| asm.push(f).unwrap()).collect()
    }

    #[test]
    fn single_channel_round_trip() {
        let s = snapshot(1);
        let frames = encode_telemetry(&s);
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].channel, 0x01);
        assert_eq!(frames[0].payload.len(), 13);
        assert_eq!(reassemble(&frames), vec![s]);
    }

    #[test]
    fn ten_channels_split_in_two() {
        let s = snapshot(10);
        let frames = encode_telemetry(&s);
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].channel, 0x02);
        assert_eq!(frames[1].channel, 0x12);
        assert_eq!(reassemble(&frames), vec![s.clone()]);
        let reversed: Vec<_> = frames.iter().rev().cloned().collect();
        assert_eq!(reassemble(&reversed), vec![s]);
    }

    #[test]
    fn twenty_four_channels_fit() {
        let s = snapshot(24);
        let frames = encode_telemetry(&s);
        assert_eq!(frames.len(), 5);
        assert!(frames.iter().all(|f| f.payload.len() <= 64));
        assert_eq!(reassemble(&frames), vec![s]);
    }

    #[test]
    fn duty_field_is_pwm_counts() {
        let cmd = ActuationCommand::inflate(Duty::from_counts(2048));
        let s = TelemetrySnapshot {
            tick: 1,
            channels: vec![ChannelTelemetry {
                pressure: 0.0,
                target: 0.0,
                flow: 0.0,
                inflate_duty: cmd.inflate_counts(),
                deflate_duty: cmd.deflate_counts(),
                valve: cmd.valve(),
                enabled: true,
            }],
        };
        let frames = encode_telemetry(&s);
        assert_eq!(&frames[0].payload[4 + 6..4 + 8], &[0x00, 0x08]);
        assert_eq!(frames[0].payload[4 + 8], FLAG_ENABLED);
    }

    #[test]
    fn stale_partial_is_dropped() {
        let mut a = snapshot(10);
        let first = encode_telemetry(&a);
        a.tick = 502;
        let second = encode_telemetry(&a);
        let mut asm = TelemetryAssembler::new();
        assert_eq!(asm.push(&first[0]).unwrap(), None);
        assert_eq!(asm.push(&second[0]).unwrap(), None);
        assert_eq!(asm.push(&second[1]).unwrap(), Some(a));
        assert_eq!(asm.incomplete(), 1);
    }

    #[test]
    fn rejects_malformed() {
        let mut asm = TelemetryAssembler::new();
        let bad = Frame { command_id: 0x0B, channel: 0x00, payload: vec![0; 4] };
        assert!(asm.push(&bad).is_err());
        let bad = Frame { command_id: 0x0B, channel: 0x01, payload: vec![0; 7] };
        assert!(asm.push(&bad).is_err());
        let bad = Frame { command_id: 0x0A, channel: 0x01, payload: vec![0; 4] };
        assert!(asm.push(&bad).is_err());
    }
}
