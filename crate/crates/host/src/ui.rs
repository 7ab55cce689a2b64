//! WebSocket bridge for the operator console.
//!
//! Outgoing messages:
//!
//! ```json
//! {"type": "hello", "channels": 10}
//! {"type": "telemetry", "tick": 1200,
//!  "channels": [{"p": 29.98, "t": 30.0, "q": 0.012, "di": 0.25, "dd": 0.0, "v": "inflate", "en": true}]}
//! {"type": "ack", "request": "set_target"}
//! {"type": "error", "request": "set_target", "code": "TargetOutOfRange", "message": "..."}
//! ```
//!
//! `p`/`t` are kPa, `q` is L/min, `di`/`dd` are duty fractions (multiples
//! of 1/4096), `v` is the valve path and `en` the enabled flag.
//!
//! Incoming messages:
//!
//! ```json
//! {"type": "set_target", "channel": 0, "target": 30.0}
//! {"type": "set_all", "targets": [20.0, 20.0]}
//! {"type": "enable", "channel": "all"}
//! {"type": "disable", "channel": 3}
//! {"type": "inject_disturbance", "channel": 0, "flow": 0.3, "duration": 0.5}
//! {"type": "set_leak", "channel": 0, "coefficient": 0.02}
//! ```

use std::net::SocketAddr;
use std::path::PathBuf;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use log::{debug, info};
use openpneu_core::controller::PWM_FULL_SCALE;
use openpneu_core::protocol::{ChannelSel, FlowCode, PressureCode, ProtocolError, Request};
use openpneu_core::{TelemetrySnapshot, Valve};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::broadcast;
use tower_http::services::ServeDir;

use crate::client::{ClientError, DeviceLink};
use crate::trajectory::ChannelRef;

#[derive(Debug, Error)]
pub enum UiError {
    #[error("port already in use: {0}")]
    PortInUse(SocketAddr),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Client(#[from] ClientError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiChannel {
    pub p: f64,
    pub t: f64,
    pub q: f64,
    pub di: f64,
    pub dd: f64,
    pub v: Valve,
    pub en: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UiOutgoing {
    Hello { channels: usize },
    Telemetry { tick: u64, channels: Vec<UiChannel> },
    Ack { request: String },
    Error { request: String, code: String, message: String },
}

impl UiOutgoing {
    pub fn telemetry(snap: &TelemetrySnapshot) -> Self {
        let scale = f64::from(PWM_FULL_SCALE);
        UiOutgoing::Telemetry {
            tick: snap.tick,
            channels: snap
                .channels
                .iter()
                .map(|c| UiChannel {
                    p: c.pressure,
                    t: c.target,
                    q: c.flow,
                    di: f64::from(c.inflate_duty.counts()) / scale,
                    dd: f64::from(c.deflate_duty.counts()) / scale,
                    v: c.valve,
                    en: c.enabled,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum UiIncoming {
    SetTarget { channel: u8, target: f64 },
    SetAll { targets: Vec<f64> },
    Enable { channel: ChannelRef },
    Disable { channel: ChannelRef },
    InjectDisturbance { channel: u8, flow: f64, duration: f64 },
    SetLeak { channel: u8, coefficient: f64 },
}

impl UiIncoming {
    pub fn name(&self) -> &'static str {
        match self {
            UiIncoming::SetTarget { .. } => "set_target",
            UiIncoming::SetAll { .. } => "set_all",
            UiIncoming::Enable { .. } => "enable",
            UiIncoming::Disable { .. } => "disable",
            UiIncoming::InjectDisturbance { .. } => "inject_disturbance",
            UiIncoming::SetLeak { .. } => "set_leak",
        }
    }

    pub fn to_request(&self) -> Result<Request, ProtocolError> {
        let sel = |c: &ChannelRef| match c {
            ChannelRef::All => ChannelSel::All,
            ChannelRef::One(i) => ChannelSel::One(u8::try_from(*i).unwrap_or(u8::MAX - 1)),
        };
        Ok(match self {
            UiIncoming::SetTarget { channel, target } => {
                Request::SetTarget { channel: *channel, target: PressureCode::from_kpa(*target)? }
            }
            UiIncoming::SetAll { targets } => {
                Request::SetAllTargets(targets.iter().map(|t| PressureCode::from_kpa(*t)).collect::<Result<_, _>>()?)
            }
            UiIncoming::Enable { channel } => Request::Enable(sel(channel)),
            UiIncoming::Disable { channel } => Request::Disable(sel(channel)),
            UiIncoming::InjectDisturbance { channel, flow, duration } => Request::InjectDisturbance {
                channel: *channel,
                flow: FlowCode::from_l_per_min(*flow)?,
                duration_ms: (duration * 1000.0).round().clamp(0.0, f64::from(u16::MAX)) as u16,
            },
            UiIncoming::SetLeak { channel, coefficient } => Request::SetLeak {
                channel: *channel,
                coefficient_micro: (coefficient * 1e6).round().clamp(0.0, f64::from(u32::MAX)) as u32,
            },
        })
    }
}

#[derive(Clone)]
struct BridgeState<L> {
    link: L,
    channels: usize,
}

const FALLBACK_PAGE: &str = "<!doctype html><title>OpenPneu</title>\
<p>Console assets not found. The telemetry WebSocket is at <code>/ws</code>.</p>";

/// Router with `/ws` plus static assets from `assets` (or a placeholder page).
pub fn router<L: DeviceLink>(link: L, channels: usize, assets: Option<PathBuf>) -> Router {
    let state = BridgeState { link, channels };
    let app = Router::new().route("/ws", get(ws_upgrade::<L>)).with_state(state);
    match assets.filter(|p| p.is_dir()) {
        Some(dir) => app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app.route("/", get(|| async { Html(FALLBACK_PAGE) })),
    }
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, UiError> {
    TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => UiError::PortInUse(addr),
        _ => UiError::Io(e),
    })
}

/// Serves the bridge until the listener fails. Turns on device telemetry first.
pub async fn serve_ui<L: DeviceLink>(
    link: L,
    channels: usize,
    listener: TcpListener,
    assets: Option<PathBuf>,
) -> Result<(), UiError> {
    link.request(Request::SubscribeTelemetry(true)).await?;
    info!("console bridge on http://{}", listener.local_addr()?);
    axum::serve(listener, router(link, channels, assets)).await?;
    Ok(())
}

async fn ws_upgrade<L: DeviceLink>(ws: WebSocketUpgrade, State(state): State<BridgeState<L>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| bridge(socket, state))
}

fn text(msg: &UiOutgoing) -> Message {
    Message::Text(serde_json::to_string(msg).expect("serializable").into())
}

async fn bridge<L: DeviceLink>(socket: WebSocket, state: BridgeState<L>) {
    let (mut sink, mut stream) = socket.split();
    let mut telemetry = state.link.telemetry();
    if sink.send(text(&UiOutgoing::Hello { channels: state.channels })).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            snap = telemetry.recv() => match snap {
                Ok(snap) => {
                    if sink.send(text(&UiOutgoing::telemetry(&snap))).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => debug!("console lagged by {n} snapshots"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = stream.next() => {
                let Some(Ok(msg)) = incoming else { break };
                let reply = match msg {
                    Message::Text(t) => handle_message(&state.link, t.as_str()).await,
                    Message::Close(_) => break,
                    _ => continue,
                };
                if sink.send(text(&reply)).await.is_err() {
                    break;
                }
            }
        }
    }
    debug!("console disconnected");
}

/// Applies one console message and builds the response.
pub async fn handle_message<L: DeviceLink>(link: &L, raw: &str) -> UiOutgoing {
    let msg: UiIncoming = match serde_json::from_str(raw) {
        Ok(m) => m,
        Err(e) => {
            return UiOutgoing::Error { request: "unknown".into(), code: "BadMessage".into(), message: e.to_string() };
        }
    };
    let request = msg.name().to_string();
    let result = match msg.to_request() {
        Ok(req) => link.request(req).await,
        Err(e) => Err(ClientError::Protocol(e)),
    };
    match result {
        Ok(_) => UiOutgoing::Ack { request },
        Err(ClientError::Device(code)) => {
            UiOutgoing::Error { request, code: format!("{code:?}"), message: format!("device rejected {code:?}") }
        }
        Err(e) => UiOutgoing::Error { request, code: "Transport".into(), message: e.to_string() },
    }
}
