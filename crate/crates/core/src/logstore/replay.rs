//! Re-simulation of recorded sessions: time-indexed state reconstruction
//! and byte-level determinism verification.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{IntegrityError, SessionLog};
use crate::model::{encode_event, EndReason, Event, EventKind, Origin, Payload, Role, SimTime, Vitals};
use crate::physiology::PatientState;
use crate::scenario::ScenarioDef;
use crate::session::{Phase, Session, SessionError};

const REPLAY_SPECTATOR: &str = "\u{0}replay-spectator";

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error(transparent)]
    Integrity(#[from] IntegrityError),
    #[error("cannot rebuild session: {0}")]
    Session(#[from] SessionError),
    #[error("time {t} is outside the log [0, {end}]")]
    Range { t: SimTime, end: SimTime },
}

/// Reconstructed state at one instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayState {
    pub clock: SimTime,
    pub patient: PatientState,
    pub vitals: Vitals,
    pub roster: BTreeMap<Role, String>,
    pub phase: Phase,
    pub state_hash: u64,
}

/// Drives a fresh session with the recorded external actions.
pub struct Replayer {
    session: Session,
    inputs: Vec<Event>,
    next_input: usize,
    end: SimTime,
    end_reason: Option<EndReason>,
}

impl Replayer {
    /// Builds a replayer; `scenario` overrides the one embedded in the header.
    pub fn new(log: &SessionLog, scenario: Option<&ScenarioDef>) -> Result<Self, ReplayError> {
        log.validate()?;
        let mut session = Session::create(log.header.session_config(scenario))?;
        for (role, client) in &log.header.roster {
            session.join(client, *role)?;
        }
        if session.phase() != Phase::Running {
            return Err(IntegrityError::Header("roster does not fill every trainee role".into()).into());
        }
        session.join(REPLAY_SPECTATOR, Role::Spectator)?;
        let inputs = log
            .events
            .iter()
            .filter(|e| e.origin == Origin::External && matches!(e.kind(), EventKind::ActionPerformed | EventKind::ActionRejected))
            .cloned()
            .collect();
        let end_reason = log.session_end().and_then(|e| match &e.payload {
            Payload::SessionEnd(end) => Some(end.reason),
            _ => None,
        });
        Ok(Replayer { session, inputs, next_input: 0, end: log.end_time(), end_reason })
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn clock(&self) -> SimTime {
        self.session.clock()
    }

    fn submit_due(&mut self, t: SimTime) -> Result<(), ReplayError> {
        while let Some(input) = self.inputs.get(self.next_input) {
            if input.time > self.session.clock() || input.time > t {
                break;
            }
            let role = input.actor.role().unwrap_or(Role::Spectator);
            let client = match role {
                Role::Spectator => REPLAY_SPECTATOR.to_string(),
                r => self.session.roster().get(&r).cloned().unwrap_or_else(|| REPLAY_SPECTATOR.to_string()),
            };
            let action = match &input.payload {
                Payload::ActionPerformed(p) => p.action.clone(),
                Payload::ActionRejected(r) => r.action.clone(),
                _ => unreachable!("inputs are filtered to actions"),
            };
            self.session.submit_action(&client, action)?;
            self.next_input += 1;
        }
        Ok(())
    }

    /// Applies every input and tick with time at or before `t`.
    /// Never moves backwards.
    pub fn advance_to(&mut self, t: SimTime) -> Result<(), ReplayError> {
        let t = t.min(self.end);
        let tick = self.session.config().tick_ms;
        loop {
            if self.session.phase() != Phase::Running {
                return Ok(());
            }
            self.submit_due(t)?;
            if self.session.clock().millis() + tick > t.millis() {
                return Ok(());
            }
            self.session.tick()?;
        }
    }

    /// Replays to the end of the log, closing the session as recorded.
    pub fn finish(&mut self) -> Result<(), ReplayError> {
        self.advance_to(self.end)?;
        if let Some(reason) = self.end_reason {
            if self.session.phase() == Phase::Running {
                self.session.end_session(reason)?;
            }
        }
        Ok(())
    }

    pub fn state(&self) -> ReplayState {
        let s = &self.session;
        ReplayState {
            clock: s.clock(),
            patient: s.patient().clone(),
            vitals: *s.vitals(),
            roster: s.roster().clone(),
            phase: s.phase(),
            state_hash: s.state_hash(),
        }
    }
}

/// State after folding every event with time at or before `t`.
pub fn state_at(log: &SessionLog, t: SimTime, scenario: Option<&ScenarioDef>) -> Result<ReplayState, ReplayError> {
    let end = log.events.last().map_or(SimTime::ZERO, |e| e.time);
    if t > end {
        return Err(ReplayError::Range { t, end });
    }
    let mut r = Replayer::new(log, scenario)?;
    r.advance_to(t)?;
    Ok(r.state())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub ok: bool,
    /// Recorded seq of the first event that differs from the re-simulation.
    pub divergent_seq: Option<u64>,
    pub detail: Option<String>,
}

fn normalized(e: &Event) -> Vec<u8> {
    let mut e = e.clone();
    e.seq = 0;
    encode_event(&e).unwrap_or_else(|err| err.to_string().into_bytes())
}

/// Re-simulates the log and compares every simulation event byte for byte,
/// ignoring sequence numbers (ingested records shift them).
pub fn verify_determinism(log: &SessionLog, scenario: Option<&ScenarioDef>) -> Result<Verdict, ReplayError> {
    let mut r = Replayer::new(log, scenario)?;
    r.finish()?;
    let recorded: Vec<&Event> = log.events.iter().filter(|e| e.is_simulation_event()).collect();
    let replayed: Vec<&Event> = r.session().events().iter().filter(|e| e.is_simulation_event()).collect();
    for (rec, rep) in recorded.iter().zip(&replayed) {
        let (a, b) = (normalized(rec), normalized(rep));
        if a != b {
            return Ok(Verdict {
                ok: false,
                divergent_seq: Some(rec.seq),
                detail: Some(format!(
                    "recorded {} but re-simulation produced {}",
                    String::from_utf8_lossy(&a),
                    String::from_utf8_lossy(&b)
                )),
            });
        }
    }
    if recorded.len() > replayed.len() {
        let rec = recorded[replayed.len()];
        return Ok(Verdict {
            ok: false,
            divergent_seq: Some(rec.seq),
            detail: Some("re-simulation ended before this recorded event".into()),
        });
    }
    if replayed.len() > recorded.len() {
        let next = log.events.last().map_or(0, |e| e.seq + 1);
        return Ok(Verdict {
            ok: false,
            divergent_seq: Some(next),
            detail: Some(format!("log is missing {} event(s) the re-simulation produced", replayed.len() - recorded.len())),
        });
    }
    Ok(Verdict { ok: true, divergent_seq: None, detail: None })
}
