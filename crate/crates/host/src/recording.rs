//! CSV telemetry recordings, one row per channel per snapshot.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use openpneu_core::controller::TICK_SECONDS;
use openpneu_core::{TelemetrySnapshot, Valve};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingRow {
    /// Seconds since the recording started.
    pub wall_time: f64,
    pub sim_tick: u64,
    pub channel: usize,
    pub pressure: f64,
    pub target: f64,
    pub flow: f64,
    /// PWM counts, 0..=4095.
    pub inflate_duty: u16,
    pub deflate_duty: u16,
    pub valve: Valve,
}

/// Source of the `wall_time` column.
#[derive(Debug, Clone, Copy)]
pub enum Clock {
    /// Host time since the recorder was created.
    Wall(Instant),
    /// Simulated time since the first recorded tick. Makes recordings of
    /// deterministic runs byte-identical.
    Sim,
}

impl Clock {
    pub fn wall() -> Self {
        Clock::Wall(Instant::now())
    }
}

pub struct Recorder<W: Write> {
    out: csv::Writer<W>,
    clock: Clock,
    first_tick: Option<u64>,
    last_tick: Option<u64>,
    rows: u64,
}

impl Recorder<File> {
    pub fn create(path: impl AsRef<Path>, clock: Clock) -> Result<Self, csv::Error> {
        Ok(Self::from_writer(File::create(path)?, clock))
    }
}

impl<W: Write> Recorder<W> {
    pub fn from_writer(writer: W, clock: Clock) -> Self {
        Self { out: csv::Writer::from_writer(writer), clock, first_tick: None, last_tick: None, rows: 0 }
    }

    /// Appends the snapshot's rows. Snapshots that do not advance the tick
    /// are skipped; returns the number of rows written.
    pub fn record(&mut self, snap: &TelemetrySnapshot) -> Result<usize, csv::Error> {
        if self.last_tick.is_some_and(|t| snap.tick <= t) {
            return Ok(0);
        }
        let first = *self.first_tick.get_or_insert(snap.tick);
        self.last_tick = Some(snap.tick);
        let wall_time = match self.clock {
            Clock::Wall(start) => start.elapsed().as_secs_f64(),
            // Divide by the rate rather than multiply by the period so that
            // whole ticks print as short decimals.
            Clock::Sim => (snap.tick - first) as f64 / (1.0 / TICK_SECONDS).round(),
        };
        for (channel, c) in snap.channels.iter().enumerate() {
            self.out.serialize(RecordingRow {
                wall_time,
                sim_tick: snap.tick,
                channel,
                pressure: c.pressure,
                target: c.target,
                flow: c.flow,
                inflate_duty: c.inflate_duty.counts(),
                deflate_duty: c.deflate_duty.counts(),
                valve: c.valve,
            })?;
        }
        self.rows += snap.channels.len() as u64;
        Ok(snap.channels.len())
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn finish(mut self) -> Result<W, csv::Error> {
        self.out.flush()?;
        self.out.into_inner().map_err(|e| e.into_error().into())
    }
}

pub fn read_recording(path: impl AsRef<Path>) -> Result<Vec<RecordingRow>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

pub fn parse_recording(text: &[u8]) -> Result<Vec<RecordingRow>, csv::Error> {
    csv::Reader::from_reader(text).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use openpneu_core::{ChannelTelemetry, Duty};

    fn snap(tick: u64) -> TelemetrySnapshot {
        let ch = ChannelTelemetry {
            pressure: 1.5,
            target: 2.0,
            flow: 0.25,
            inflate_duty: Duty::from_counts(2048),
            deflate_duty: Duty::ZERO,
            valve: Valve::InflatePath,
            enabled: true,
        };
        TelemetrySnapshot { tick, channels: vec![ch; 2] }
    }

    #[test]
    fn header_and_rows() {
        let mut rec = Recorder::from_writer(Vec::new(), Clock::Sim);
        rec.record(&snap(10)).unwrap();
        rec.record(&snap(10)).unwrap();
        rec.record(&snap(12)).unwrap();
        assert_eq!(rec.rows(), 4);
        let text = String::from_utf8(rec.finish().unwrap()).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "wall_time,sim_tick,channel,pressure,target,flow,inflate_duty,deflate_duty,valve");
        assert_eq!(lines[1], "0.0,10,0,1.5,2.0,0.25,2048,0,inflate");
        assert_eq!(lines[4], "0.04,12,1,1.5,2.0,0.25,2048,0,inflate");
        let rows = parse_recording(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[3].sim_tick, 12);
    }
}
