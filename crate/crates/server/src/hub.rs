//! Transport-free message handling. The hub owns the session and turns each
//! client message, tick or disconnect into outbound deliveries. The
//! session clock is the only time source: nothing a client sends is
//! ever used as a timestamp.

use std::collections::BTreeMap;
use std::path::PathBuf;

use codeteam_core::analytics::{build_report, LoopWindows};
use codeteam_core::logstore::{LogHeader, LogWriter, SessionLog};
use codeteam_core::model::{EndReason, Event, Payload, Role, SimTime};
use codeteam_core::session::{ClientId, Phase, Session, SessionConfig, SessionError};

use crate::wire::{format_hash, DenyReason, ErrorCode, Snapshot, WireMessage, PROTOCOL_VERSION, SNAPSHOT_EVENTS};

#[derive(Debug, Clone, PartialEq)]
pub enum Outbound {
    Send { to: Vec<ClientId>, msg: WireMessage },
    /// Flush what is queued for the client, then close its connection.
    Close(ClientId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SnapshotError {
    #[error("session has not started")]
    NotStarted,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Unavailable {
    #[error("session has not started")]
    NotStarted,
    #[error("session is still running")]
    StillRunning,
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Clone, Default)]
struct Conn {
    greeted: bool,
    role: Option<Role>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HubView {
    pub phase: Phase,
    pub clock: SimTime,
    pub state_hash: u64,
    pub events: usize,
    pub roster: BTreeMap<Role, ClientId>,
    pub connected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShutdownSummary {
    pub session_id: String,
    pub log_path: Option<PathBuf>,
    pub end_reason: Option<EndReason>,
    pub events: usize,
    /// First log write failure, if any.
    pub log_error: Option<String>,
}

pub struct Hub {
    session: Session,
    session_id: String,
    conns: BTreeMap<ClientId, Conn>,
    max_duration: Option<SimTime>,
    log_path: Option<PathBuf>,
    header: Option<LogHeader>,
    writer: Option<LogWriter>,
    log_error: Option<String>,
}

impl Hub {
    pub fn new(config: SessionConfig, session_id: String, log_path: Option<PathBuf>) -> Result<Self, SessionError> {
        Ok(Hub {
            session: Session::create(config)?,
            session_id,
            conns: BTreeMap::new(),
            max_duration: None,
            log_path,
            header: None,
            writer: None,
            log_error: None,
        })
    }

    /// Ends the session `Completed` once the clock reaches `limit`.
    pub fn with_max_duration(mut self, limit: SimTime) -> Self {
        self.max_duration = Some(limit);
        self
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn view(&self) -> HubView {
        HubView {
            phase: self.session.phase(),
            clock: self.session.clock(),
            state_hash: self.session.state_hash(),
            events: self.session.events().len(),
            roster: self.session.roster().clone(),
            connected: self.conns.len(),
        }
    }

    /// Clients holding a role, in id order. Broadcasts go to these.
    pub fn joined(&self) -> Vec<ClientId> {
        self.conns.iter().filter(|(_, c)| c.role.is_some()).map(|(id, _)| id.clone()).collect()
    }

    pub fn connect(&mut self, client: &str) {
        self.conns.insert(client.to_string(), Conn::default());
    }

    fn to(&self, client: &str, msg: WireMessage) -> Outbound {
        Outbound::Send { to: vec![client.to_string()], msg }
    }

    fn error(&self, client: &str, code: ErrorCode, message: impl Into<String>) -> Outbound {
        self.to(client, WireMessage::Error { session_id: self.session_id.clone(), code, message: message.into() })
    }

    fn session_error(&self, client: &str, err: SessionError) -> Outbound {
        let code = match err {
            SessionError::NotStarted => ErrorCode::NotStarted,
            SessionError::SessionOver => ErrorCode::SessionOver,
            SessionError::ReadOnly => ErrorCode::ReadOnly,
            SessionError::ClientUnknown(_) => ErrorCode::NotJoined,
            _ => ErrorCode::ProtocolError,
        };
        self.error(client, code, err.to_string())
    }

    /// Text that failed to parse as a `WireMessage`.
    pub fn handle_malformed(&mut self, client: &str, problem: &str) -> Vec<Outbound> {
        match self.conns.get(client) {
            None => Vec::new(),
            Some(c) if !c.greeted => self.protocol_violation(client),
            Some(_) => vec![self.error(client, ErrorCode::Malformed, problem)],
        }
    }

    fn protocol_violation(&mut self, client: &str) -> Vec<Outbound> {
        let out = vec![
            self.error(client, ErrorCode::ProtocolError, "the first message must be Hello"),
            Outbound::Close(client.to_string()),
        ];
        self.conns.remove(client);
        out
    }

    pub fn handle_message(&mut self, client: &str, msg: WireMessage) -> Vec<Outbound> {
        let Some(conn) = self.conns.get(client).cloned() else {
            return Vec::new();
        };
        if !conn.greeted {
            return match msg {
                WireMessage::Hello { protocol_version } if protocol_version == PROTOCOL_VERSION => {
                    self.conns.get_mut(client).expect("checked above").greeted = true;
                    Vec::new()
                }
                WireMessage::Hello { .. } => {
                    self.conns.remove(client);
                    let deny = WireMessage::JoinDenied {
                        session_id: self.session_id.clone(),
                        reason: DenyReason::VersionMismatch,
                    };
                    vec![self.to(client, deny), Outbound::Close(client.to_string())]
                }
                _ => self.protocol_violation(client),
            };
        }
        match msg {
            WireMessage::Hello { .. } => vec![self.error(client, ErrorCode::DuplicateHello, "Hello was already received")],
            WireMessage::Join { role } => self.join(client, conn, role),
            _ if conn.role.is_none() => vec![self.error(client, ErrorCode::NotJoined, "join a role first")],
            WireMessage::ActionRequest { action } => match self.session.submit_action(client, action) {
                Ok(events) => self.fan_out(events, Some(client)),
                Err(e) => vec![self.session_error(client, e)],
            },
            WireMessage::UtteranceNote { text, tags, addressee, orders_action } => {
                match self.session.record_utterance(client, text, tags, addressee, orders_action) {
                    Ok(event) => self.fan_out(vec![event], Some(client)),
                    Err(e) => vec![self.session_error(client, e)],
                }
            }
            other => vec![self.error(client, ErrorCode::Malformed, format!("{} is a server message", type_name(&other)))],
        }
    }

    fn join(&mut self, client: &str, conn: Conn, role: Role) -> Vec<Outbound> {
        let deny = |hub: &Self, reason| {
            vec![hub.to(client, WireMessage::JoinDenied { session_id: hub.session_id.clone(), reason })]
        };
        if conn.role.is_some() {
            return deny(self, DenyReason::AlreadyJoined);
        }
        // Spectators may still watch an ended session; the hub admits them
        // without touching the session.
        let events = if role == Role::Spectator && self.session.phase() == Phase::Ended {
            Vec::new()
        } else {
            match self.session.join(client, role) {
                Ok(events) => events,
                Err(SessionError::RoleTaken(_)) => return deny(self, DenyReason::RoleTaken),
                Err(SessionError::SessionOver) => return deny(self, DenyReason::SessionOver),
                Err(SessionError::AlreadyJoined(_)) => return deny(self, DenyReason::AlreadyJoined),
                Err(e) => return vec![self.session_error(client, e)],
            }
        };
        self.conns.get_mut(client).expect("connected").role = Some(role);
        let mut out = vec![self.to(client, WireMessage::Joined { session_id: self.session_id.clone(), role })];
        if events.is_empty() {
            if let Ok(snapshot) = self.snapshot() {
                out.push(self.to(client, WireMessage::Snapshot { session_id: self.session_id.clone(), snapshot: Box::new(snapshot) }));
            }
        }
        out.extend(self.fan_out(events, Some(client)));
        out
    }

    /// A dropped connection. A trainee leaving a running session aborts it.
    pub fn disconnect(&mut self, client: &str) -> Vec<Outbound> {
        let Some(conn) = self.conns.remove(client) else {
            return Vec::new();
        };
        if conn.role.is_none() || self.session.role_of(client).is_none() {
            return Vec::new();
        }
        match self.session.leave(client) {
            Ok(events) => self.fan_out(events, None),
            Err(_) => Vec::new(),
        }
    }

    pub fn tick(&mut self) -> Vec<Outbound> {
        if self.session.phase() != Phase::Running {
            return Vec::new();
        }
        let mut events = self.session.tick().expect("session is running");
        if self.max_duration.is_some_and(|limit| self.session.clock() >= limit) {
            events.push(self.session.end_session(EndReason::Completed).expect("session is running"));
        }
        self.fan_out(events, None)
    }

    /// Aborts a running session, closes every connection and the log.
    pub fn shutdown(&mut self) -> (Vec<Outbound>, ShutdownSummary) {
        let mut out = match self.session.phase() {
            Phase::Running => {
                let end = self.session.end_session(EndReason::Aborted).expect("session is running");
                self.fan_out(vec![end], None)
            }
            Phase::Lobby => {
                let msg = WireMessage::SessionEnded { session_id: self.session_id.clone(), reason: EndReason::Aborted };
                vec![Outbound::Send { to: self.joined(), msg }]
            }
            Phase::Ended => Vec::new(),
        };
        out.extend(std::mem::take(&mut self.conns).into_keys().map(Outbound::Close));
        self.close_log();
        let end_reason = self.session.events().iter().rev().find_map(|e| match &e.payload {
            Payload::SessionEnd(end) => Some(end.reason),
            _ => None,
        });
        let summary = ShutdownSummary {
            session_id: self.session_id.clone(),
            log_path: self.header.as_ref().and(self.log_path.clone()),
            end_reason,
            events: self.session.events().len(),
            log_error: self.log_error.clone(),
        };
        (out, summary)
    }

    pub fn snapshot(&self) -> Result<Snapshot, SnapshotError> {
        let s = &self.session;
        if s.phase() == Phase::Lobby {
            return Err(SnapshotError::NotStarted);
        }
        let events = s.events();
        Ok(Snapshot {
            phase: s.phase(),
            scenario_id: s.scenario().id.clone(),
            clock: s.clock(),
            patient: s.patient().clone(),
            vitals: *s.vitals(),
            roster: s.roster().clone(),
            spectators: self.conns.values().filter(|c| c.role == Some(Role::Spectator)).count(),
            permissions: s.scenario().permissions.clone(),
            state_hash: format_hash(s.state_hash()),
            recent_events: events[events.len().saturating_sub(SNAPSHOT_EVENTS)..].to_vec(),
        })
    }

    /// The log so far, byte-identical to the file being written.
    pub fn log(&self) -> Option<SessionLog> {
        let header = self.header.clone()?;
        Some(SessionLog { header, events: self.session.events().to_vec() })
    }

    pub fn log_text(&self) -> Result<String, Unavailable> {
        let log = self.log().ok_or(Unavailable::NotStarted)?;
        log.to_text().map_err(|e| Unavailable::Failed(e.to_string()))
    }

    pub fn report_json(&self, windows: LoopWindows) -> Result<String, Unavailable> {
        let log = self.log().ok_or(Unavailable::NotStarted)?;
        if self.session.phase() != Phase::Ended {
            return Err(Unavailable::StillRunning);
        }
        build_report(&log, self.session.scenario(), windows)
            .map(|r| r.to_json_pretty())
            .map_err(|e| Unavailable::Failed(e.to_string()))
    }

    fn persist(&mut self, e: &Event) {
        if matches!(e.payload, Payload::SessionStart(_)) {
            let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
            let header = LogHeader::for_session(&self.session, Some(started_at));
            if let Some(path) = &self.log_path {
                match LogWriter::create(path, &header) {
                    Ok(w) => self.writer = Some(w),
                    Err(err) => self.log_failed(format!("create {}: {err}", path.display())),
                }
            }
            self.header = Some(header);
        }
        if let Some(w) = &mut self.writer {
            if let Err(err) = w.append(e) {
                self.writer = None;
                self.log_failed(format!("append seq {}: {err}", e.seq));
            }
        }
        if matches!(e.payload, Payload::SessionEnd(_)) {
            self.close_log();
        }
    }

    fn close_log(&mut self) {
        if let Some(w) = self.writer.take() {
            if let Err(err) = w.finish() {
                self.log_failed(format!("close: {err}"));
            }
        }
    }

    fn log_failed(&mut self, message: String) {
        tracing::error!(session = %self.session_id, "log write failed: {message}");
        self.log_error.get_or_insert(message);
    }

    /// Persists `events` and broadcasts each, in seq order, to every joined
    /// client. Rejections are also unicast to `sender`.
    fn fan_out(&mut self, events: Vec<Event>, sender: Option<&str>) -> Vec<Outbound> {
        let mut out = Vec::new();
        for e in events {
            self.persist(&e);
            let to = self.joined();
            let sid = self.session_id.clone();
            let extra = match &e.payload {
                Payload::VitalsSample(s) => Some(WireMessage::VitalsUpdate { session_id: sid.clone(), time: e.time, vitals: s.vitals }),
                Payload::AlertEmitted(a) => Some(WireMessage::Alert { session_id: sid.clone(), time: e.time, alert: a.clone() }),
                Payload::SessionEnd(end) => Some(WireMessage::SessionEnded { session_id: sid.clone(), reason: end.reason }),
                _ => None,
            };
            let rejection = match (&e.payload, sender) {
                (Payload::ActionRejected(r), Some(client)) => Some((
                    client,
                    WireMessage::ActionRejected { session_id: sid.clone(), seq: e.seq, action: r.action.clone(), reason: r.reason },
                )),
                _ => None,
            };
            out.push(Outbound::Send { to: to.clone(), msg: WireMessage::EventBroadcast { session_id: sid, event: e } });
            if let Some(msg) = extra {
                out.push(Outbound::Send { to, msg });
            }
            if let Some((client, msg)) = rejection {
                out.push(self.to(client, msg));
            }
        }
        out
    }
}

fn type_name(m: &WireMessage) -> &'static str {
    match m {
        WireMessage::Hello { .. } => "Hello",
        WireMessage::Join { .. } => "Join",
        WireMessage::ActionRequest { .. } => "ActionRequest",
        WireMessage::UtteranceNote { .. } => "UtteranceNote",
        WireMessage::Joined { .. } => "Joined",
        WireMessage::JoinDenied { .. } => "JoinDenied",
        WireMessage::EventBroadcast { .. } => "EventBroadcast",
        WireMessage::Snapshot { .. } => "Snapshot",
        WireMessage::Alert { .. } => "Alert",
        WireMessage::VitalsUpdate { .. } => "VitalsUpdate",
        WireMessage::SessionEnded { .. } => "SessionEnded",
        WireMessage::ActionRejected { .. } => "ActionRejected",
        WireMessage::Error { .. } => "Error",
    }
}
