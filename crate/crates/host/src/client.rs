//! Host-side client for a device speaking the binary protocol.

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use log::debug;
use openpneu_core::controller::PidGains;
use openpneu_core::protocol::{
    ChannelSel, CommandId, Decoder, ErrorCode, FlowCode, Frame, GainsPayload, PingInfo, PressureCode, ProtocolError,
    Reply, Request, TelemetryAssembler,
};
use openpneu_core::TelemetrySnapshot;
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::{TcpStream, ToSocketAddrs};
use tokio::sync::{broadcast, mpsc, Mutex};
use tokio::time::{timeout, timeout_at, Instant};

use crate::server::{Session, TELEMETRY_BUFFER};

pub const REPLY_TIMEOUT: Duration = Duration::from_millis(200);
pub const RETRIES: u32 = 3;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("no reply after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("device rejected command: {0:?}")]
    Device(ErrorCode),
    #[error("expected {expected} targets, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("connection closed")]
    TransportClosed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("malformed reply: {0}")]
    BadReply(&'static str),
}

impl ClientError {
    /// True for failures of the link rather than refusals by the device.
    pub fn is_transport(&self) -> bool {
        matches!(self, ClientError::Timeout { .. } | ClientError::TransportClosed | ClientError::Io(_))
    }
}

/// Anything that can carry requests to a device and expose its telemetry.
pub trait DeviceLink: Clone + Send + Sync + 'static {
    /// Sends one request and returns the acknowledgement data.
    fn request(&self, request: Request) -> impl Future<Output = Result<Vec<u8>, ClientError>> + Send;

    /// Reassembled snapshots. Only populated once telemetry is subscribed.
    fn telemetry(&self) -> broadcast::Receiver<Arc<TelemetrySnapshot>>;
}

fn ack_data(reply: Reply) -> Result<Vec<u8>, ClientError> {
    match reply {
        Reply::Ack { data, .. } => Ok(data),
        Reply::Error { code, .. } => Err(ClientError::Device(code)),
    }
}

struct Port {
    writer: Box<dyn AsyncWrite + Send + Unpin>,
    replies: mpsc::UnboundedReceiver<Reply>,
}

struct Inner {
    port: Mutex<Port>,
    telemetry: broadcast::Sender<Arc<TelemetrySnapshot>>,
    reply_timeout: Duration,
    retries: u32,
    channel_count: usize,
}

/// Connection to a device. Cheap to clone; requests from clones are
/// serialized on the one connection.
#[derive(Clone)]
pub struct Client {
    inner: Arc<Inner>,
}

impl Client {
    pub async fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let (r, w) = stream.into_split();
        Self::over(r, w).await
    }

    /// Wraps an already-open byte stream and pings the device to learn its
    /// channel count.
    pub async fn over<R, W>(reader: R, writer: W) -> Result<Self, ClientError>
    where
        R: AsyncRead + Unpin + Send + 'static,
        W: AsyncWrite + Unpin + Send + 'static,
    {
        Self::with_timing(reader, writer, REPLY_TIMEOUT, RETRIES).await
    }

    pub async fn with_timing<R, W>(
        reader: R,
        writer: W,
        reply_timeout: Duration,
        retries: u32,
    ) -> Result<Self, ClientError>
    where
        R: AsyncRead + Unpin + Send + 'static,
        W: AsyncWrite + Unpin + Send + 'static,
    {
        let (reply_tx, replies) = mpsc::unbounded_channel();
        let (telemetry, _) = broadcast::channel(TELEMETRY_BUFFER);
        tokio::spawn(read_in(reader, reply_tx, telemetry.clone()));
        let mut inner = Inner {
            port: Mutex::new(Port { writer: Box::new(writer), replies }),
            telemetry,
            reply_timeout,
            retries,
            channel_count: 0,
        };
        let info = ping_on(&inner).await?;
        inner.channel_count = usize::from(info.channel_count);
        Ok(Self { inner: Arc::new(inner) })
    }

    pub fn channel_count(&self) -> usize {
        self.inner.channel_count
    }

    pub async fn ping(&self) -> Result<PingInfo, ClientError> {
        ping_on(&self.inner).await
    }

    pub async fn set_pressure(&self, channel: u8, kpa: f64) -> Result<(), ClientError> {
        let target = PressureCode::from_kpa(kpa)?;
        self.request(Request::SetTarget { channel, target }).await.map(drop)
    }

    /// Sets every channel in one broadcast frame, so all targets change on
    /// the same tick.
    pub async fn set_all(&self, kpa: &[f64]) -> Result<(), ClientError> {
        if kpa.len() != self.channel_count() {
            return Err(ClientError::LengthMismatch { expected: self.channel_count(), got: kpa.len() });
        }
        let codes = kpa.iter().map(|&p| PressureCode::from_kpa(p)).collect::<Result<Vec<_>, _>>()?;
        self.request(Request::SetAllTargets(codes)).await.map(drop)
    }

    pub async fn read_pressure(&self, sel: ChannelSel) -> Result<Vec<f64>, ClientError> {
        let data = self.request(Request::ReadPressure(sel)).await?;
        Ok(Reply::Ack { command: 0, channel: 0, data }.pressures())
    }

    pub async fn read_flow(&self, sel: ChannelSel) -> Result<Vec<f64>, ClientError> {
        let data = self.request(Request::ReadFlow(sel)).await?;
        Ok(Reply::Ack { command: 0, channel: 0, data }.flows())
    }

    pub async fn enable(&self, sel: ChannelSel) -> Result<(), ClientError> {
        self.request(Request::Enable(sel)).await.map(drop)
    }

    pub async fn disable(&self, sel: ChannelSel) -> Result<(), ClientError> {
        self.request(Request::Disable(sel)).await.map(drop)
    }

    pub async fn set_gains(
        &self,
        sel: ChannelSel,
        gains: PidGains,
        bands: Option<(f64, f64)>,
    ) -> Result<(), ClientError> {
        self.request(Request::SetGains { channel: sel, payload: GainsPayload { gains, bands } }).await.map(drop)
    }

    /// Simulated external flow of `flow` L/min for `duration` seconds.
    pub async fn inject(&self, channel: u8, flow: f64, duration: f64) -> Result<(), ClientError> {
        let duration_ms = (duration * 1000.0).round();
        if !(1.0..=f64::from(u16::MAX)).contains(&duration_ms) {
            return Err(ClientError::Device(ErrorCode::InvalidParameter));
        }
        let flow = FlowCode::from_l_per_min(flow)?;
        self.request(Request::InjectDisturbance { channel, flow, duration_ms: duration_ms as u16 }).await.map(drop)
    }

    /// Leak coefficient in (L/min)/kPa.
    pub async fn set_leak(&self, channel: u8, coefficient: f64) -> Result<(), ClientError> {
        if !(coefficient.is_finite() && coefficient >= 0.0) {
            return Err(ClientError::Device(ErrorCode::InvalidParameter));
        }
        let coefficient_micro = (coefficient * 1e6).round().min(f64::from(u32::MAX)) as u32;
        self.request(Request::SetLeak { channel, coefficient_micro }).await.map(drop)
    }

    /// Starts telemetry and returns a subscription that sees every snapshot
    /// from now on.
    pub async fn subscribe(&self) -> Result<Subscription, ClientError> {
        let rx = self.inner.telemetry.subscribe();
        self.request(Request::SubscribeTelemetry(true)).await?;
        Ok(Subscription::new(rx))
    }

    pub async fn request(&self, request: Request) -> Result<Vec<u8>, ClientError> {
        let frame = request.to_frame()?;
        exchange(&self.inner, &frame).await.and_then(ack_data)
    }
}

impl DeviceLink for Client {
    fn request(&self, request: Request) -> impl Future<Output = Result<Vec<u8>, ClientError>> + Send {
        Client::request(self, request)
    }

    fn telemetry(&self) -> broadcast::Receiver<Arc<TelemetrySnapshot>> {
        self.inner.telemetry.subscribe()
    }
}

async fn ping_on(inner: &Inner) -> Result<PingInfo, ClientError> {
    let frame = Request::Ping.to_frame()?;
    let data = ack_data(exchange(inner, &frame).await?)?;
    PingInfo::from_bytes(&data).ok_or(ClientError::BadReply("ping payload"))
}

/// Sends `frame` and waits for the reply with the same command and channel,
/// resending on timeout. Replies that do not match (late answers to earlier
/// attempts) are discarded.
async fn exchange(inner: &Inner, frame: &Frame) -> Result<Reply, ClientError> {
    let bytes = frame.encode()?;
    let mut port = inner.port.lock().await;
    while port.replies.try_recv().is_ok() {}
    let attempts = inner.retries + 1;
    for attempt in 0..attempts {
        if attempt > 0 {
            debug!("retrying command 0x{:02X} (attempt {})", frame.command_id, attempt + 1);
        }
        port.writer.write_all(&bytes).await?;
        port.writer.flush().await?;
        let deadline = Instant::now() + inner.reply_timeout;
        loop {
            match timeout_at(deadline, port.replies.recv()).await {
                Ok(Some(reply)) if reply.command() == frame.command_id && reply.channel() == frame.channel => {
                    return Ok(reply);
                }
                Ok(Some(stale)) => debug!("discarding unmatched reply {stale:?}"),
                Ok(None) => return Err(ClientError::TransportClosed),
                Err(_) => break,
            }
        }
    }
    Err(ClientError::Timeout { attempts })
}

async fn read_in<R: AsyncRead + Unpin>(
    mut reader: R,
    replies: mpsc::UnboundedSender<Reply>,
    telemetry: broadcast::Sender<Arc<TelemetrySnapshot>>,
) {
    let mut decoder = Decoder::new();
    let mut assembler = TelemetryAssembler::new();
    let mut buf = [0u8; 4096];
    loop {
        let n = match reader.read(&mut buf).await {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        decoder.push(&buf[..n]);
        while let Some(item) = decoder.next_frame() {
            let Ok(frame) = item else { continue };
            match frame.command() {
                Ok(CommandId::Telemetry) => {
                    if let Ok(Some(snap)) = assembler.push(&frame) {
                        let _ = telemetry.send(Arc::new(snap));
                    }
                }
                Ok(CommandId::Reply | CommandId::Error) => {
                    if let Some(reply) = Reply::from_frame(&frame) {
                        let _ = replies.send(reply);
                    }
                }
                _ => debug!("ignoring unexpected frame 0x{:02X}", frame.command_id),
            }
        }
    }
}

/// Telemetry consumer. Delivers snapshots in strictly increasing tick order;
/// if the consumer falls more than the buffer behind, the oldest snapshots
/// are dropped and counted.
pub struct Subscription {
    rx: broadcast::Receiver<Arc<TelemetrySnapshot>>,
    dropped: u64,
    last_tick: Option<u64>,
}

impl Subscription {
    pub fn new(rx: broadcast::Receiver<Arc<TelemetrySnapshot>>) -> Self {
        Self { rx, dropped: 0, last_tick: None }
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub async fn next(&mut self) -> Result<Arc<TelemetrySnapshot>, ClientError> {
        loop {
            match self.rx.recv().await {
                Ok(snap) => {
                    if self.last_tick.is_some_and(|t| snap.tick <= t) {
                        continue;
                    }
                    self.last_tick = Some(snap.tick);
                    return Ok(snap);
                }
                Err(broadcast::error::RecvError::Lagged(n)) => self.dropped += n,
                Err(broadcast::error::RecvError::Closed) => return Err(ClientError::TransportClosed),
            }
        }
    }

    /// Like [`Subscription::next`] but gives up after `wait`.
    pub async fn next_within(&mut self, wait: Duration) -> Result<Option<Arc<TelemetrySnapshot>>, ClientError> {
        match timeout(wait, self.next()).await {
            Ok(r) => r.map(Some),
            Err(_) => Ok(None),
        }
    }
}

/// In-process link to a device loop, used when the bridge and the simulator
/// share a process.
#[derive(Clone)]
pub struct LocalLink {
    session: Arc<Session>,
    handle: crate::server::LoopHandle,
}

impl LocalLink {
    pub fn new(handle: crate::server::LoopHandle) -> Self {
        Self { session: Arc::new(handle.open_session()), handle }
    }
}

impl DeviceLink for LocalLink {
    fn request(&self, request: Request) -> impl Future<Output = Result<Vec<u8>, ClientError>> + Send {
        let session = self.session.clone();
        async move {
            let frame = request.to_frame()?;
            let reply = session.request(frame).await.map_err(|_| ClientError::TransportClosed)?;
            ack_data(reply)
        }
    }

    fn telemetry(&self) -> broadcast::Receiver<Arc<TelemetrySnapshot>> {
        self.handle.subscribe()
    }
}
