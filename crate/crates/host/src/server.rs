//! Device loop and byte-stream transports.
//!
//! One task owns the [`Device`]. Sessions talk to it over a channel; commands
//! are applied between ticks, so every command takes effect on a tick
//! boundary. Snapshots are published on a broadcast channel every
//! `decimation` ticks.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use log::{debug, info, warn};
use openpneu_core::protocol::{encode_telemetry, Decoder, ErrorCode, Frame, Reply, Request};
use openpneu_core::scenario::{ScenarioError, ScenarioEvent, ScenarioRunner};
use openpneu_core::{Device, DeviceError, TelemetrySnapshot};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;

/// Snapshots buffered per subscriber before the oldest are dropped.
pub const TELEMETRY_BUFFER: usize = 1024;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("device loop has stopped")]
    LoopStopped,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// A command frame injected at a fixed tick, before that tick runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledFrame {
    pub tick: u64,
    pub frame: Frame,
}

#[derive(Debug, Clone)]
pub struct LoopConfig {
    /// Publish one snapshot every `decimation` ticks.
    pub decimation: u32,
    /// Run ticks back to back instead of on the wall-clock schedule.
    pub accelerated: bool,
    /// Wall-clock tick period in real-time mode.
    pub tick_period: Duration,
    /// Stop after this many ticks.
    pub max_ticks: Option<u64>,
    pub schedule: Vec<ScheduledFrame>,
    pub scenario: Vec<ScenarioEvent>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            decimation: openpneu_core::config::DEFAULT_TELEMETRY_DECIMATION,
            accelerated: false,
            tick_period: Duration::from_millis(20),
            max_ticks: None,
            schedule: Vec::new(),
            scenario: Vec::new(),
        }
    }
}

type SessionId = u64;

enum LoopMsg {
    Frame { session: SessionId, frame: Frame, reply: oneshot::Sender<Reply> },
    Release(SessionId),
    Stop,
}

/// Cloneable handle to a running device loop.
#[derive(Clone)]
pub struct LoopHandle {
    tx: mpsc::UnboundedSender<LoopMsg>,
    telemetry: broadcast::Sender<Arc<TelemetrySnapshot>>,
    next_session: Arc<AtomicU64>,
    channel_count: usize,
}

impl LoopHandle {
    pub fn open_session(&self) -> Session {
        let id = self.next_session.fetch_add(1, Ordering::Relaxed);
        Session { id, tx: self.tx.clone() }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<TelemetrySnapshot>> {
        self.telemetry.subscribe()
    }

    pub fn channel_count(&self) -> usize {
        self.channel_count
    }

    pub fn stop(&self) {
        let _ = self.tx.send(LoopMsg::Stop);
    }
}

/// One logical client of the device loop. At most one session at a time
/// holds the commander role; it is claimed by the first mutating command and
/// released when the session is dropped.
pub struct Session {
    id: SessionId,
    tx: mpsc::UnboundedSender<LoopMsg>,
}

impl Session {
    pub async fn request(&self, frame: Frame) -> Result<Reply, ServerError> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(LoopMsg::Frame { session: self.id, frame, reply }).map_err(|_| ServerError::LoopStopped)?;
        rx.await.map_err(|_| ServerError::LoopStopped)
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.tx.send(LoopMsg::Release(self.id));
    }
}

/// Starts the control loop on the current runtime. The join handle yields
/// the device when the loop stops.
pub fn spawn_device_loop(device: Device, config: LoopConfig) -> (LoopHandle, JoinHandle<Result<Device, ServerError>>) {
    let (tx, rx) = mpsc::unbounded_channel();
    let (telemetry, _) = broadcast::channel(TELEMETRY_BUFFER);
    let handle = LoopHandle {
        tx,
        telemetry: telemetry.clone(),
        next_session: Arc::new(AtomicU64::new(1)),
        channel_count: device.channel_count(),
    };
    let join = tokio::spawn(run_loop(device, config, rx, telemetry));
    (handle, join)
}

struct LoopState {
    device: Device,
    commander: Option<SessionId>,
    stopping: bool,
}

impl LoopState {
    fn handle(&mut self, msg: LoopMsg) {
        match msg {
            LoopMsg::Frame { session, frame, reply } => {
                let _ = reply.send(self.dispatch(session, &frame));
            }
            LoopMsg::Release(session) => {
                if self.commander == Some(session) {
                    debug!("session {session} released commander role");
                    self.commander = None;
                }
            }
            LoopMsg::Stop => self.stopping = true,
        }
    }

    fn dispatch(&mut self, session: SessionId, frame: &Frame) -> Reply {
        let mutating = Request::from_frame(frame).is_ok_and(|r| r.is_mutating());
        if mutating {
            match self.commander {
                None => {
                    debug!("session {session} is now commander");
                    self.commander = Some(session);
                }
                Some(owner) if owner != session => {
                    return Reply::Error {
                        command: frame.command_id,
                        channel: frame.channel,
                        code: ErrorCode::NotCommander,
                    };
                }
                Some(_) => {}
            }
        }
        self.device.handle_frame(frame)
    }
}

async fn run_loop(
    device: Device,
    config: LoopConfig,
    mut rx: mpsc::UnboundedReceiver<LoopMsg>,
    telemetry: broadcast::Sender<Arc<TelemetrySnapshot>>,
) -> Result<Device, ServerError> {
    let mut state = LoopState { device, commander: None, stopping: false };
    let mut schedule = config.schedule.clone();
    schedule.sort_by_key(|s| std::cmp::Reverse(s.tick));
    let mut scenario = ScenarioRunner::new(&config.scenario, state.device.dt());
    let decimation = u64::from(config.decimation.max(1));
    let mut interval = (!config.accelerated).then(|| {
        let mut iv = tokio::time::interval(config.tick_period);
        iv.set_missed_tick_behavior(MissedTickBehavior::Burst);
        iv
    });
    let mut inbox_open = true;
    info!(
        "device loop started: {} channels, {}",
        state.device.channel_count(),
        if config.accelerated { "accelerated" } else { "real-time" }
    );

    loop {
        if state.stopping || config.max_ticks.is_some_and(|n| state.device.tick_count() >= n) {
            break;
        }
        match interval.as_mut() {
            Some(iv) => loop {
                tokio::select! {
                    biased;
                    _ = iv.tick() => break,
                    msg = rx.recv(), if inbox_open => match msg {
                        Some(msg) => state.handle(msg),
                        None => inbox_open = false,
                    },
                }
            },
            None => {
                tokio::task::yield_now().await;
                while let Ok(msg) = rx.try_recv() {
                    state.handle(msg);
                }
            }
        }
        if state.stopping {
            break;
        }

        let now = state.device.tick_count();
        while schedule.last().is_some_and(|s| s.tick <= now) {
            let s = schedule.pop().expect("non-empty");
            if let Reply::Error { code, .. } = state.device.handle_frame(&s.frame) {
                warn!("scheduled command 0x{:02X} at tick {} failed: {code:?}", s.frame.command_id, s.tick);
            }
        }
        scenario.apply_due(&mut state.device)?;
        let snapshot = state.device.tick()?;
        if snapshot.tick % decimation == 0 {
            // No subscribers is fine.
            let _ = telemetry.send(Arc::new(snapshot));
        }
    }
    info!("device loop stopped at tick {}", state.device.tick_count());
    Ok(state.device)
}

/// Serves the binary protocol on one byte stream until the peer closes it.
/// The device loop keeps running afterwards.
pub async fn serve_stream<R, W>(handle: LoopHandle, mut reader: R, writer: W) -> Result<(), ServerError>
where
    R: AsyncRead + Unpin,
    W: AsyncWrite + Unpin + Send + 'static,
{
    let session = handle.open_session();
    let (out_tx, out_rx) = mpsc::channel::<Vec<u8>>(TELEMETRY_BUFFER);
    let (sub_tx, sub_rx) = watch::channel(false);
    let writer_task = tokio::spawn(write_out(writer, out_rx));
    let telemetry_task = tokio::spawn(forward_telemetry(handle.subscribe(), sub_rx, out_tx.clone()));

    let mut decoder = Decoder::new();
    let mut buf = [0u8; 1024];
    let result = loop {
        let n = match reader.read(&mut buf).await {
            Ok(0) => break Ok(()),
            Ok(n) => n,
            Err(e) => break Err(e.into()),
        };
        decoder.push(&buf[..n]);
        let mut failed = None;
        while let Some(item) = decoder.next_frame() {
            let frame = match item {
                Ok(f) => f,
                Err(e) => {
                    debug!("dropping bad frame: {e}");
                    continue;
                }
            };
            if let Ok(Request::SubscribeTelemetry(on)) = Request::from_frame(&frame) {
                let _ = sub_tx.send(on);
            }
            let reply = match session.request(frame).await {
                Ok(r) => r,
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            };
            let bytes = reply.to_frame().encode().expect("reply fits a frame");
            if out_tx.send(bytes).await.is_err() {
                failed = Some(ServerError::Io(std::io::ErrorKind::BrokenPipe.into()));
                break;
            }
        }
        if let Some(e) = failed {
            break Err(e);
        }
    };
    telemetry_task.abort();
    drop(out_tx);
    let _ = writer_task.await;
    result
}

async fn write_out<W: AsyncWrite + Unpin>(mut writer: W, mut rx: mpsc::Receiver<Vec<u8>>) {
    while let Some(bytes) = rx.recv().await {
        if writer.write_all(&bytes).await.is_err() || writer.flush().await.is_err() {
            break;
        }
    }
}

async fn forward_telemetry(
    mut rx: broadcast::Receiver<Arc<TelemetrySnapshot>>,
    subscribed: watch::Receiver<bool>,
    out: mpsc::Sender<Vec<u8>>,
) {
    loop {
        let snap = match rx.recv().await {
            Ok(s) => s,
            Err(broadcast::error::RecvError::Lagged(n)) => {
                debug!("session lagged, {n} snapshots dropped");
                continue;
            }
            Err(broadcast::error::RecvError::Closed) => break,
        };
        if !*subscribed.borrow() {
            continue;
        }
        for frame in encode_telemetry(&snap) {
            let bytes = frame.encode().expect("telemetry fits a frame");
            // A slow peer loses telemetry rather than stalling replies.
            if let Err(mpsc::error::TrySendError::Closed(_)) = out.try_send(bytes) {
                return;
            }
        }
    }
}

/// Accepts connections forever, one session per connection.
pub async fn serve_tcp(listener: TcpListener, handle: LoopHandle) -> Result<(), ServerError> {
    loop {
        let (stream, peer) = listener.accept().await?;
        stream.set_nodelay(true)?;
        info!("client connected: {peer}");
        let handle = handle.clone();
        tokio::spawn(async move {
            let (r, w) = stream.into_split();
            match serve_stream(handle, r, w).await {
                Ok(()) => info!("client disconnected: {peer}"),
                Err(e) => warn!("session {peer} ended: {e}"),
            }
        });
    }
}

/// Serves one session on standard input/output.
pub async fn serve_stdio(handle: LoopHandle) -> Result<(), ServerError> {
    serve_stream(handle, tokio::io::stdin(), tokio::io::stdout()).await
}
