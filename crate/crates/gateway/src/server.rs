//! Network front end: WebSocket (JSON text frames) and length-prefixed TCP.

use std::io;
use std::net::SocketAddr;
use std::time::Duration;

use futures_util::stream::{SplitSink, SplitStream};
use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::WebSocketStream;

use crate::protocol::{parse_request, WireMessage};
use crate::runner::LoopHandle;

pub const WS_ADDR_ENV: &str = "FESLOOP_GATEWAY_ADDR";
pub const TCP_ADDR_ENV: &str = "FESLOOP_GATEWAY_TCP_ADDR";
pub const DEFAULT_WS_ADDR: &str = "127.0.0.1:8765";
pub const DEFAULT_TCP_ADDR: &str = "127.0.0.1:8766";

/// Largest accepted TCP frame.
pub const MAX_FRAME: u32 = 1 << 20;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    pub ws_addr: String,
    /// Raw TCP listener; `None` disables it.
    pub tcp_addr: Option<String>,
    pub heartbeat: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            ws_addr: DEFAULT_WS_ADDR.into(),
            tcp_addr: Some(DEFAULT_TCP_ADDR.into()),
            heartbeat: Duration::from_secs(5),
        }
    }
}

impl GatewayConfig {
    /// Defaults overridden by the bind-address environment variables.
    pub fn from_env() -> Self {
        let mut cfg = GatewayConfig::default();
        if let Ok(a) = std::env::var(WS_ADDR_ENV) {
            cfg.ws_addr = a;
        }
        if let Ok(a) = std::env::var(TCP_ADDR_ENV) {
            cfg.tcp_addr = (!a.is_empty()).then_some(a);
        }
        cfg
    }

    /// Ephemeral localhost ports for both transports.
    pub fn ephemeral() -> Self {
        GatewayConfig {
            ws_addr: "127.0.0.1:0".into(),
            tcp_addr: Some("127.0.0.1:0".into()),
            ..Default::default()
        }
    }
}

/// Listening gateway; dropping it stops accepting and closes all clients.
pub struct Gateway {
    pub ws_addr: SocketAddr,
    pub tcp_addr: Option<SocketAddr>,
    tasks: Vec<JoinHandle<()>>,
}

impl Gateway {
    pub fn shutdown(self) {}
}

impl Drop for Gateway {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

async fn bind(addr: &str) -> Result<TcpListener, GatewayError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| GatewayError::BindFailure {
            addr: addr.into(),
            source,
        })
}

/// Binds the listeners and starts serving `handle`. Must be called inside
/// a tokio runtime.
pub async fn serve(config: &GatewayConfig, handle: LoopHandle) -> Result<Gateway, GatewayError> {
    let ws = bind(&config.ws_addr).await?;
    let tcp = match &config.tcp_addr {
        Some(a) => Some(bind(a).await?),
        None => None,
    };
    let ws_addr = ws
        .local_addr()
        .map_err(|source| GatewayError::BindFailure {
            addr: config.ws_addr.clone(),
            source,
        })?;
    let tcp_addr = tcp.as_ref().and_then(|l| l.local_addr().ok());

    let mut tasks = vec![tokio::spawn(accept_loop(
        ws,
        handle.clone(),
        config.heartbeat,
        Transport::WebSocket,
    ))];
    if let Some(l) = tcp {
        tasks.push(tokio::spawn(accept_loop(
            l,
            handle,
            config.heartbeat,
            Transport::Tcp,
        )));
    }
    log::info!("gateway listening on ws://{ws_addr} and tcp {tcp_addr:?}");
    Ok(Gateway {
        ws_addr,
        tcp_addr,
        tasks,
    })
}

#[derive(Debug, Clone, Copy)]
enum Transport {
    WebSocket,
    Tcp,
}

async fn accept_loop(
    listener: TcpListener,
    handle: LoopHandle,
    heartbeat: Duration,
    transport: Transport,
) {
    // aborting this task drops the set, which aborts every client
    let mut clients = tokio::task::JoinSet::new();
    loop {
        let (stream, peer) = match listener.accept().await {
            Ok(c) => c,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        let handle = handle.clone();
        while clients.try_join_next().is_some() {}
        clients.spawn(async move {
            let result = match transport {
                Transport::WebSocket => match tokio_tungstenite::accept_async(stream).await {
                    Ok(ws) => {
                        let (w, r) = ws.split();
                        client_session(Writer::Ws(w), Reader::Ws(r), handle, heartbeat).await
                    }
                    Err(e) => Err(io::Error::other(e)),
                },
                Transport::Tcp => {
                    let (r, w) = stream.into_split();
                    client_session(Writer::Tcp(w), Reader::Tcp(r), handle, heartbeat).await
                }
            };
            match result {
                Ok(()) => log::info!("client {peer} disconnected"),
                Err(e) => log::info!("client {peer} dropped: {e}"),
            }
        });
    }
}

enum Writer {
    Ws(SplitSink<WebSocketStream<TcpStream>, Message>),
    Tcp(OwnedWriteHalf),
}

impl Writer {
    async fn text(&mut self, text: &str) -> io::Result<()> {
        match self {
            Writer::Ws(w) => w
                .send(Message::Text(text.to_string()))
                .await
                .map_err(io::Error::other),
            Writer::Tcp(w) => {
                w.write_all(&(text.len() as u32).to_be_bytes()).await?;
                w.write_all(text.as_bytes()).await
            }
        }
    }

    async fn ping(&mut self) -> io::Result<()> {
        match self {
            Writer::Ws(w) => w
                .send(Message::Ping(Vec::new()))
                .await
                .map_err(io::Error::other),
            // an empty frame is the TCP heartbeat
            Writer::Tcp(w) => w.write_all(&0u32.to_be_bytes()).await,
        }
    }
}

enum Reader {
    Ws(SplitStream<WebSocketStream<TcpStream>>),
    Tcp(OwnedReadHalf),
}

impl Reader {
    /// Next client text message; `None` at end of stream.
    async fn next(&mut self) -> Option<io::Result<String>> {
        match self {
            Reader::Ws(r) => loop {
                match r.next().await? {
                    Ok(Message::Text(t)) => return Some(Ok(t)),
                    Ok(Message::Binary(b)) => {
                        return Some(Ok(String::from_utf8_lossy(&b).into_owned()))
                    }
                    Ok(Message::Close(_)) => return None,
                    Ok(_) => continue,
                    Err(e) => return Some(Err(io::Error::other(e))),
                }
            },
            Reader::Tcp(r) => loop {
                let len = match r.read_u32().await {
                    Ok(n) => n,
                    Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return None,
                    Err(e) => return Some(Err(e)),
                };
                if len == 0 {
                    continue;
                }
                if len > MAX_FRAME {
                    return Some(Err(io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("frame of {len} bytes"),
                    )));
                }
                let mut buf = vec![0; len as usize];
                if let Err(e) = r.read_exact(&mut buf).await {
                    return Some(Err(e));
                }
                return Some(Ok(String::from_utf8_lossy(&buf).into_owned()));
            },
        }
    }
}

async fn client_session(
    mut writer: Writer,
    mut reader: Reader,
    handle: LoopHandle,
    heartbeat: Duration,
) -> io::Result<()> {
    let mut states = handle.subscribe();
    let (reply_tx, mut reply_rx) = mpsc::unbounded_channel::<oneshot::Receiver<WireMessage>>();

    let read_side = async {
        while let Some(text) = reader.next().await {
            let text = text?;
            let (tx, rx) = oneshot::channel();
            match parse_request(&text) {
                Ok((seq, request)) => {
                    let (done, answer) = oneshot::channel();
                    handle.send_request(seq, request, done);
                    tokio::spawn(async move {
                        let msg = match answer.await {
                            Ok(Ok(t_us)) => WireMessage::ack(seq, t_us),
                            Ok(Err(reason)) => WireMessage::error(seq, reason),
                            Err(_) => WireMessage::error(seq, "control loop has stopped"),
                        };
                        let _ = tx.send(msg);
                    });
                }
                Err((seq, reason)) => {
                    let _ = tx.send(WireMessage::error(seq, reason));
                }
            }
            if reply_tx.send(rx).is_err() {
                break;
            }
        }
        Ok::<(), io::Error>(())
    };

    let write_side = async {
        let mut beat = tokio::time::interval_at(tokio::time::Instant::now() + heartbeat, heartbeat);
        loop {
            tokio::select! {
                biased;
                Some(pending) = reply_rx.recv() => {
                    if let Ok(msg) = pending.await {
                        writer.text(&msg.to_json()).await?;
                    }
                }
                state = states.recv() => match state {
                    Ok(json) => writer.text(&json).await?,
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        return Err(io::Error::new(io::ErrorKind::TimedOut, format!("client fell {n} updates behind")));
                    }
                    Err(broadcast::error::RecvError::Closed) => return Ok(()),
                },
                _ = beat.tick() => writer.ping().await?,
            }
        }
    };

    tokio::select! {
        r = read_side => r,
        w = write_side => w,
    }
}
