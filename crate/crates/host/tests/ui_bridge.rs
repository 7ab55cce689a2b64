use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use openpneu::client::{Client, LocalLink};
use openpneu::server::{serve_tcp, spawn_device_loop, LoopConfig, LoopHandle};
use openpneu::ui::{self, UiError, UiOutgoing};
use openpneu_core::Device;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn device_loop(channels: usize) -> LoopHandle {
    let cfg = LoopConfig { tick_period: Duration::from_millis(2), ..LoopConfig::default() };
    spawn_device_loop(Device::simulated(channels).unwrap(), cfg).0
}

async fn local_bridge(channels: usize, assets: Option<PathBuf>) -> SocketAddr {
    let handle = device_loop(channels);
    let listener = ui::bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(ui::serve_ui(LocalLink::new(handle), channels, listener, assets));
    addr
}

async fn recv(ws: &mut Ws) -> UiOutgoing {
    let msg =
        tokio::time::timeout(Duration::from_secs(5), ws.next()).await.expect("bridge went quiet").unwrap().unwrap();
    serde_json::from_str(msg.to_text().unwrap()).unwrap()
}

/// Next non-telemetry message.
async fn reply(ws: &mut Ws) -> UiOutgoing {
    loop {
        match recv(ws).await {
            UiOutgoing::Telemetry { .. } => continue,
            other => return other,
        }
    }
}

async fn send(ws: &mut Ws, text: &str) {
    ws.send(Message::Text(text.to_string().into())).await.unwrap();
}

#[tokio::test]
async fn websocket_round_trip() {
    let addr = local_bridge(4, None).await;
    let (mut ws, _) = connect_async(format!("ws://{addr}/ws")).await.unwrap();
    assert_eq!(recv(&mut ws).await, UiOutgoing::Hello { channels: 4 });

    send(&mut ws, r#"{"type": "set_target", "channel": 1, "target": 30}"#).await;
    assert_eq!(reply(&mut ws).await, UiOutgoing::Ack { request: "set_target".into() });
    loop {
        if let UiOutgoing::Telemetry { channels, .. } = recv(&mut ws).await {
            assert_eq!(channels.len(), 4);
            if channels[1].t == 30.0 {
                assert!(channels[1].di > 0.0);
                break;
            }
        }
    }

    send(&mut ws, r#"{"type": "set_target", "channel": 1, "target": 95}"#).await;
    match reply(&mut ws).await {
        UiOutgoing::Error { request, code, .. } => {
            assert_eq!(request, "set_target");
            assert_eq!(code, "TargetOutOfRange");
        }
        other => panic!("{other:?}"),
    }

    send(&mut ws, r#"{"type": "set_all", "targets": [1, 2, 3]}"#).await;
    assert!(matches!(reply(&mut ws).await, UiOutgoing::Error { .. }));
    send(&mut ws, r#"{"type": "disable", "channel": "all"}"#).await;
    assert_eq!(reply(&mut ws).await, UiOutgoing::Ack { request: "disable".into() });
    send(&mut ws, r#"{"type": "inject_disturbance", "channel": 0, "flow": 0.3, "duration": 0.5}"#).await;
    assert_eq!(reply(&mut ws).await, UiOutgoing::Ack { request: "inject_disturbance".into() });
    send(&mut ws, r#"{"type": "set_leak", "channel": 0, "coefficient": 0.02}"#).await;
    assert_eq!(reply(&mut ws).await, UiOutgoing::Ack { request: "set_leak".into() });
    send(&mut ws, r#"{"type": "launch"}"#).await;
    match reply(&mut ws).await {
        UiOutgoing::Error { code, .. } => assert_eq!(code, "BadMessage"),
        other => panic!("{other:?}"),
    }
    loop {
        if let UiOutgoing::Telemetry { channels, .. } = recv(&mut ws).await {
            if channels.iter().all(|c| !c.en) {
                break;
            }
        }
    }
}

#[tokio::test]
async fn telemetry_ticks_increase() {
    let addr = local_bridge(2, None).await;
    let (mut ws, _) = connect_async(format!("ws://{addr}/ws")).await.unwrap();
    let mut last = None;
    let mut seen = 0;
    while seen < 20 {
        if let UiOutgoing::Telemetry { tick, .. } = recv(&mut ws).await {
            assert!(last.is_none_or(|l| tick > l));
            last = Some(tick);
            seen += 1;
        }
    }
}

#[tokio::test]
async fn bridge_over_a_remote_client() {
    let handle = device_loop(3);
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let dev_addr = listener.local_addr().unwrap();
    tokio::spawn(serve_tcp(listener, handle));
    let client = Client::connect(dev_addr).await.unwrap();
    let ui_listener = ui::bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr = ui_listener.local_addr().unwrap();
    tokio::spawn(ui::serve_ui(client, 3, ui_listener, None));

    let (mut ws, _) = connect_async(format!("ws://{addr}/ws")).await.unwrap();
    assert_eq!(recv(&mut ws).await, UiOutgoing::Hello { channels: 3 });
    send(&mut ws, r#"{"type": "set_all", "targets": [10, -10, 20]}"#).await;
    assert_eq!(reply(&mut ws).await, UiOutgoing::Ack { request: "set_all".into() });
    loop {
        if let UiOutgoing::Telemetry { channels, .. } = recv(&mut ws).await {
            if channels.iter().map(|c| c.t).eq([10.0, -10.0, 20.0]) {
                break;
            }
        }
    }
}

async fn http_get(addr: SocketAddr, path: &str) -> String {
    let mut s = TcpStream::connect(addr).await.unwrap();
    s.write_all(format!("GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").as_bytes()).await.unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).await.unwrap();
    out
}

#[tokio::test]
async fn serves_static_assets() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>console</h1>").unwrap();
    std::fs::write(dir.path().join("app.js"), "console.log(1)").unwrap();
    let addr = local_bridge(1, Some(dir.path().to_path_buf())).await;
    let index = http_get(addr, "/").await;
    assert!(index.starts_with("HTTP/1.1 200"), "{index}");
    assert!(index.ends_with("<h1>console</h1>"));
    assert!(http_get(addr, "/app.js").await.ends_with("console.log(1)"));
    assert!(http_get(addr, "/missing.css").await.starts_with("HTTP/1.1 404"));

    let bare = local_bridge(1, None).await;
    assert!(http_get(bare, "/").await.contains("/ws"));
}

#[tokio::test]
async fn port_in_use() {
    let taken = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = taken.local_addr().unwrap();
    assert!(matches!(ui::bind(addr).await, Err(UiError::PortInUse(a)) if a == addr));
}
