//! Trajectory drivers: in-process against a [`Device`], or remote through a
//! [`Client`].

use std::io::Write;

use openpneu_core::scenario::{ScenarioError, ScenarioEvent, ScenarioRunner};
use openpneu_core::{Device, DeviceError};
use thiserror::Error;

use crate::analysis::TrajectoryReport;
use crate::client::{Client, ClientError};
use crate::recording::Recorder;
use crate::trajectory::{Action, Trajectory, TrajectoryError, TrajectoryRunner};

/// Envelope assumed for a remote device, whose plant parameters are unknown
/// to the host.
pub const DEFAULT_ENVELOPE: (f64, f64) = (-50.0, 80.0);

#[derive(Debug, Error)]
pub enum DriveError {
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("writing recording: {0}")]
    Csv(#[from] csv::Error),
}

/// Tightest target range accepted by every channel.
pub fn device_envelope(device: &Device) -> (f64, f64) {
    device.channels().iter().map(|c| c.envelope()).fold((f64::MIN, f64::MAX), |(lo, hi), (a, b)| (lo.max(a), hi.min(b)))
}

/// Runs `traj` on an in-process device tick by tick. Scenario times are
/// measured from device power-up. Output is fully deterministic.
pub fn run_local<W: Write>(
    device: &mut Device,
    traj: &Trajectory,
    scenario: &[ScenarioEvent],
    mut recorder: Option<&mut Recorder<W>>,
) -> Result<TrajectoryReport, DriveError> {
    traj.validate(device.channel_count(), device_envelope(device))?;
    let start = device.tick_count();
    let targets = device.channels().iter().map(|c| c.target).collect();
    let mut runner = TrajectoryRunner::new(traj, targets, start, device.dt());
    let mut events = ScenarioRunner::new(scenario, device.dt());

    let primer = device.snapshot();
    runner.observe(&primer);
    if let Some(rec) = recorder.as_deref_mut() {
        rec.record(&primer)?;
    }
    while !runner.is_done(device.tick_count()) {
        for action in runner.due(device.tick_count()) {
            match action {
                Action::SetTarget(c, t) => device.set_target(c, t)?,
                Action::SetAll(ts) => device.set_all_targets(&ts)?,
            }
        }
        events.apply_due(device)?;
        let snap = device.tick()?;
        if let Some(rec) = recorder.as_deref_mut() {
            rec.record(&snap)?;
        }
        runner.observe(&snap);
    }
    Ok(runner.finish())
}

/// Runs `traj` against a live device. Setpoints go out as soon as the
/// snapshot for their tick arrives, so timing is quantized to the telemetry
/// rate.
pub async fn run_remote<W: Write>(
    client: &Client,
    traj: &Trajectory,
    envelope: (f64, f64),
    mut recorder: Option<&mut Recorder<W>>,
) -> Result<TrajectoryReport, DriveError> {
    traj.validate(client.channel_count(), envelope)?;
    let mut sub = client.subscribe().await?;
    let primer = sub.next().await?;
    let targets = primer.channels.iter().map(|c| c.target).collect();
    let dt = openpneu_core::controller::TICK_SECONDS;
    let mut runner = TrajectoryRunner::new(traj, targets, primer.tick, dt);
    runner.observe(&primer);
    if let Some(rec) = recorder.as_deref_mut() {
        rec.record(&primer)?;
    }
    let mut tick = primer.tick;
    while !runner.is_done(tick) {
        for action in runner.due(tick) {
            match action {
                Action::SetTarget(c, t) => client.set_pressure(c as u8, t).await?,
                Action::SetAll(ts) => client.set_all(&ts).await?,
            }
        }
        let snap = sub.next().await?;
        tick = snap.tick;
        if let Some(rec) = recorder.as_deref_mut() {
            rec.record(&snap)?;
        }
        runner.observe(&snap);
    }
    if sub.dropped() > 0 {
        log::warn!("{} snapshots dropped during the run", sub.dropped());
    }
    Ok(runner.finish())
}
