//! WebSocket and HTTP plumbing around the [`Hub`]. One actor task owns the
//! hub and processes commands in arrival order; connection tasks only
//! forward frames.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

use codeteam_core::analytics::LoopWindows;
use codeteam_core::model::SimTime;
use codeteam_core::session::{ClientId, SessionConfig, SessionError};

use crate::hub::{Hub, HubView, Outbound, ShutdownSummary, Unavailable};
use crate::wire::WireMessage;

pub const DEFAULT_QUEUE_DEPTH: usize = 1024;
const DRAIN_TIMEOUT: Duration = Duration::from_secs(2);
/// How long a closing connection keeps reading for the peer's Close.
const LINGER: Duration = Duration::from_secs(2);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub session: SessionConfig,
    /// Directory for the `.cts` file; `None` keeps the log in memory only.
    pub log_dir: Option<PathBuf>,
    /// Wall-clock time per session tick. `None` disables the timer; the
    /// session then advances only through [`ServerHandle::advance`].
    pub tick_interval: Option<Duration>,
    /// Outbound frames a client may have queued before it is disconnected.
    pub queue_depth: usize,
    pub max_duration: Option<SimTime>,
    pub loop_windows: LoopWindows,
}

impl ServerConfig {
    /// Real-time pacing: one tick per `tick_ms` of wall time.
    pub fn new(session: SessionConfig) -> Self {
        let tick = Duration::from_millis(session.tick_ms);
        ServerConfig {
            session,
            log_dir: None,
            tick_interval: Some(tick),
            queue_depth: DEFAULT_QUEUE_DEPTH,
            max_duration: None,
            loop_windows: LoopWindows::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("server task has stopped")]
    Stopped,
}

enum Command {
    Connect { client: ClientId, tx: mpsc::Sender<Utf8Bytes> },
    Frame { client: ClientId, text: String },
    Disconnect { client: ClientId },
    Advance { ticks: u32, reply: oneshot::Sender<()> },
    View { reply: oneshot::Sender<HubView> },
    Log { reply: oneshot::Sender<Result<String, Unavailable>> },
    Report { reply: oneshot::Sender<Result<String, Unavailable>> },
    Shutdown { reply: oneshot::Sender<ShutdownSummary> },
}

#[derive(Clone)]
struct AppState {
    cmds: mpsc::Sender<Command>,
    next_client: Arc<AtomicU64>,
    queue_depth: usize,
    /// Cloned into every writer task; the receiver resolves once all are gone.
    drain: mpsc::Sender<()>,
}

pub struct ServerHandle {
    addr: SocketAddr,
    session_id: String,
    cmds: mpsc::Sender<Command>,
    stop: oneshot::Sender<()>,
    http: JoinHandle<std::io::Result<()>>,
    actor: JoinHandle<()>,
    drained: mpsc::Receiver<()>,
}

/// Binds `addr` and starts accepting connections and ticking.
pub async fn serve(cfg: ServerConfig, addr: SocketAddr) -> Result<ServerHandle, ServerError> {
    let session_id = format!("{}-{}", cfg.session.scenario.id, chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ"));
    let log_path = cfg.log_dir.as_ref().map(|d| d.join(format!("{session_id}.cts")));
    let mut hub = Hub::new(cfg.session.clone(), session_id.clone(), log_path)?;
    if let Some(limit) = cfg.max_duration {
        hub = hub.with_max_duration(limit);
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;

    let (cmds, rx) = mpsc::channel(1024);
    let (drain, drained) = mpsc::channel(1);
    let state = AppState { cmds: cmds.clone(), next_client: Arc::new(AtomicU64::new(0)), queue_depth: cfg.queue_depth.max(1), drain };
    let actor = tokio::spawn(run_hub(hub, rx, cfg.tick_interval, cfg.loop_windows));

    let app = Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/log", get(get_log))
        .route("/report", get(get_report))
        .with_state(state);
    let (stop, stopped) = oneshot::channel::<()>();
    let http = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    tracing::info!(%addr, session = %session_id, "serving");
    Ok(ServerHandle { addr, session_id, cmds, stop, http, actor, drained })
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    async fn ask<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> Result<T, ServerError> {
        let (reply, rx) = oneshot::channel();
        self.cmds.send(make(reply)).await.map_err(|_| ServerError::Stopped)?;
        rx.await.map_err(|_| ServerError::Stopped)
    }

    /// Runs `ticks` session ticks immediately, in addition to the timer.
    pub async fn advance(&self, ticks: u32) -> Result<(), ServerError> {
        self.ask(|reply| Command::Advance { ticks, reply }).await
    }

    pub async fn view(&self) -> Result<HubView, ServerError> {
        self.ask(|reply| Command::View { reply }).await
    }

    /// Aborts a running session, tells every client, closes the log and
    /// stops the listener.
    pub async fn shutdown(mut self) -> Result<ShutdownSummary, ServerError> {
        let summary = self.ask(|reply| Command::Shutdown { reply }).await?;
        let _ = self.actor.await;
        let _ = self.stop.send(());
        self.http.await.map_err(|_| ServerError::Stopped)??;
        let _ = tokio::time::timeout(DRAIN_TIMEOUT, self.drained.recv()).await;
        Ok(summary)
    }
}

async fn run_hub(
    mut hub: Hub,
    mut rx: mpsc::Receiver<Command>,
    tick_interval: Option<Duration>,
    windows: LoopWindows,
) {
    let mut outboxes: BTreeMap<ClientId, mpsc::Sender<Utf8Bytes>> = BTreeMap::new();
    let mut ticker = tick_interval.map(|d| {
        let mut t = tokio::time::interval_at(tokio::time::Instant::now() + d, d);
        t.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        t
    });
    loop {
        let cmd = tokio::select! {
            cmd = rx.recv() => match cmd {
                Some(cmd) => cmd,
                None => return,
            },
            _ = async {
                match ticker.as_mut() {
                    Some(t) => t.tick().await,
                    None => std::future::pending().await,
                }
            } => {
                let out = hub.tick();
                dispatch(&mut hub, &mut outboxes, out);
                continue;
            }
        };
        match cmd {
            Command::Connect { client, tx } => {
                hub.connect(&client);
                outboxes.insert(client, tx);
            }
            Command::Frame { client, text } => {
                let out = match WireMessage::parse(&text) {
                    Ok(msg) if msg.is_client_message() => hub.handle_message(&client, msg),
                    Ok(msg) => hub.handle_malformed(&client, &format!("unexpected server message: {}", msg.to_json())),
                    Err(e) => hub.handle_malformed(&client, &e.to_string()),
                };
                dispatch(&mut hub, &mut outboxes, out);
            }
            Command::Disconnect { client } => {
                outboxes.remove(&client);
                let out = hub.disconnect(&client);
                dispatch(&mut hub, &mut outboxes, out);
            }
            Command::Advance { ticks, reply } => {
                for _ in 0..ticks {
                    let out = hub.tick();
                    dispatch(&mut hub, &mut outboxes, out);
                }
                let _ = reply.send(());
            }
            Command::View { reply } => {
                let _ = reply.send(hub.view());
            }
            Command::Log { reply } => {
                let _ = reply.send(hub.log_text());
            }
            Command::Report { reply } => {
                let _ = reply.send(hub.report_json(windows));
            }
            Command::Shutdown { reply } => {
                let (out, summary) = hub.shutdown();
                dispatch(&mut hub, &mut outboxes, out);
                outboxes.clear();
                let _ = reply.send(summary);
                return;
            }
        }
    }
}

/// Delivers in order. A client whose queue is full or gone is dropped,
/// which may produce further deliveries (a trainee leaving aborts).
fn dispatch(hub: &mut Hub, outboxes: &mut BTreeMap<ClientId, mpsc::Sender<Utf8Bytes>>, out: Vec<Outbound>) {
    let mut pending: std::collections::VecDeque<Outbound> = out.into();
    while let Some(o) = pending.pop_front() {
        match o {
            Outbound::Close(client) => {
                outboxes.remove(&client);
            }
            Outbound::Send { to, msg } => {
                let frame = Utf8Bytes::from(msg.to_json());
                for client in to {
                    let Some(tx) = outboxes.get(&client) else { continue };
                    if tx.try_send(frame.clone()).is_err() {
                        tracing::warn!(%client, "outbound queue full or closed; disconnecting");
                        outboxes.remove(&client);
                        pending.extend(hub.disconnect(&client));
                    }
                }
            }
        }
    }
}

async fn ws_upgrade(State(state): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn connection(socket: WebSocket, state: AppState) {
    let AppState { cmds, next_client, queue_depth, drain } = state;
    let client = format!("conn-{}", next_client.fetch_add(1, Ordering::Relaxed));
    let (tx, mut rx) = mpsc::channel::<Utf8Bytes>(queue_depth);
    if cmds.send(Command::Connect { client: client.clone(), tx }).await.is_err() {
        return;
    }
    let (mut sink, mut stream) = socket.split();
    let mut writer = tokio::spawn(async move {
        let _drain = drain;
        while let Some(frame) = rx.recv().await {
            if sink.send(Message::Text(frame)).await.is_err() {
                return;
            }
        }
        let _ = sink.send(Message::Close(None)).await;
    });
    let mut closing = false;
    loop {
        tokio::select! {
            _ = &mut writer => {
                closing = true;
                break;
            }
            frame = stream.next() => {
                let text = match frame {
                    Some(Ok(Message::Text(t))) => t.to_string(),
                    Some(Ok(Message::Binary(b))) => String::from_utf8_lossy(&b).into_owned(),
                    Some(Ok(Message::Ping(_) | Message::Pong(_))) => continue,
                    Some(Ok(Message::Close(_)) | Err(_)) | None => break,
                };
                if cmds.send(Command::Frame { client: client.clone(), text }).await.is_err() {
                    break;
                }
            }
        }
    }
    let _ = cmds.send(Command::Disconnect { client }).await;
    if closing {
        // Closing with unread input resets the TCP stream, which can discard
        // frames the peer has not read yet; consume input until its Close.
        let _ = tokio::time::timeout(LINGER, async {
            while let Some(Ok(frame)) = stream.next().await {
                if matches!(frame, Message::Close(_)) {
                    break;
                }
            }
        })
        .await;
    }
}

fn unavailable(e: Unavailable) -> Response {
    let status = match e {
        Unavailable::NotStarted => StatusCode::NOT_FOUND,
        Unavailable::StillRunning => StatusCode::CONFLICT,
        Unavailable::Failed(_) => StatusCode::INTERNAL_SERVER_ERROR,
    };
    (status, e.to_string()).into_response()
}

async fn fetch(state: &AppState, make: impl FnOnce(oneshot::Sender<Result<String, Unavailable>>) -> Command) -> Result<String, Response> {
    let (reply, rx) = oneshot::channel();
    let stopped = || (StatusCode::SERVICE_UNAVAILABLE, "server is shutting down").into_response();
    state.cmds.send(make(reply)).await.map_err(|_| stopped())?;
    rx.await.map_err(|_| stopped())?.map_err(unavailable)
}

async fn get_log(State(state): State<AppState>) -> Response {
    match fetch(&state, |reply| Command::Log { reply }).await {
        Ok(text) => ([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response(),
        Err(r) => r,
    }
}

async fn get_report(State(state): State<AppState>) -> Response {
    match fetch(&state, |reply| Command::Report { reply }).await {
        Ok(json) => ([(header::CONTENT_TYPE, "application/json")], json).into_response(),
        Err(r) => r,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use codeteam_core::model::{EndReason, Rhythm, Role};
    use codeteam_core::scenario::ScenarioDef;
    use codeteam_core::session::Phase;

    fn joined_hub(clients: &[(&str, Role)]) -> Hub {
        let cfg = SessionConfig::new(ScenarioDef::minimal("n", Rhythm::Asystole), 1);
        let mut hub = Hub::new(cfg, "n".into(), None).unwrap();
        for (c, role) in clients {
            hub.connect(c);
            hub.handle_message(c, WireMessage::Hello { protocol_version: crate::PROTOCOL_VERSION });
            hub.handle_message(c, WireMessage::Join { role: *role });
        }
        hub
    }

    #[test]
    fn full_queue_disconnects_only_that_client() {
        let mut clients: Vec<(&str, Role)> = vec![("tl", Role::TeamLeader), ("cp", Role::Compressor), ("aw", Role::Airway), ("dm", Role::DefibMeds)];
        clients.push(("slow", Role::Spectator));
        let mut hub = joined_hub(&clients);
        assert_eq!(hub.session().phase(), Phase::Running);

        let mut outboxes = BTreeMap::new();
        let mut inboxes = BTreeMap::new();
        for (c, _) in &clients {
            let depth = if *c == "slow" { 2 } else { 64 };
            let (tx, rx) = mpsc::channel(depth);
            outboxes.insert(c.to_string(), tx);
            inboxes.insert(c.to_string(), rx);
        }
        for _ in 0..30 {
            let out = hub.tick();
            dispatch(&mut hub, &mut outboxes, out);
        }
        assert!(!outboxes.contains_key("slow"));
        assert_eq!(hub.view().connected, 4);
        assert_eq!(hub.session().phase(), Phase::Running, "a spectator leaving does not end the session");
        let mut fast = inboxes.remove("tl").unwrap();
        let mut received = 0;
        while fast.try_recv().is_ok() {
            received += 1;
        }
        assert_eq!(received, 6, "3 samples, each as EventBroadcast plus VitalsUpdate");
    }

    #[test]
    fn slow_trainee_aborts_the_session() {
        let clients = [("tl", Role::TeamLeader), ("cp", Role::Compressor), ("aw", Role::Airway), ("dm", Role::DefibMeds)];
        let mut hub = joined_hub(&clients);
        let mut outboxes = BTreeMap::new();
        let mut keep = Vec::new();
        for (c, _) in &clients {
            let (tx, rx) = mpsc::channel(if *c == "aw" { 1 } else { 64 });
            outboxes.insert(c.to_string(), tx);
            keep.push(rx);
        }
        for _ in 0..20 {
            let out = hub.tick();
            dispatch(&mut hub, &mut outboxes, out);
        }
        assert_eq!(hub.session().phase(), Phase::Ended);
        let (_, summary) = hub.shutdown();
        assert_eq!(summary.end_reason, Some(EndReason::Aborted));
    }
}
