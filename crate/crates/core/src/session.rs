//! Authoritative session: roster, permission checks, fixed-tick advance,
//! scripted injection and feedback. The only writer of event sequence numbers.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::feedback::{evaluate, modulate, FeedbackContext, Modulator, LOOKBACK_MS};
use crate::model::{
    state_hash, ActionKind, ActionName, ActionPattern, ActionPerformed, ActionRejected, Actor, EndReason, Event,
    Origin, Payload, RejectReason, Role, ScriptedEffect, ScriptedEvent, SessionEnd, SessionStart, SimTime,
    StateTransition, UtterancePayload, UtteranceTag, Vitals, VitalsSample,
};
use crate::physiology::{self, force_rhythm, rhythm_profile, PatientState, PhysioError, Prng};
use crate::scenario::{has_errors, scripted_events_due, validate_scenario, Issue, IssueSeverity, ScenarioDef};

pub type ClientId = String;

pub const DEFAULT_TICK_MS: u64 = 100;
pub const DEFAULT_SAMPLE_EVERY_MS: u64 = 1000;

/// Which actions each role may perform. Roles without an entry may do nothing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PermissionMatrix(pub BTreeMap<Role, BTreeSet<ActionName>>);

impl Default for PermissionMatrix {
    fn default() -> Self {
        use ActionName::*;
        let shared = [CallForHelp, CheckResponsiveness];
        let rows: [(Role, &[ActionName]); 4] = [
            (Role::TeamLeader, &[CheckPulse, CheckRhythm, OrderEkg, OrderXray, AnnounceRhythm]),
            (Role::Compressor, &[StartCompressions, StopCompressions, SetCompressionRate, CheckPulse]),
            (Role::Airway, &[InsertOralAirway, BagValveMaskVentilate, Intubate, Auscultate]),
            (
                Role::DefibMeds,
                &[AttachMonitor, AttachPads, ChargeDefibrillator, DeliverShock, ClearPatient, ObtainIvAccess, AdministerDrug, PushFluids],
            ),
        ];
        PermissionMatrix(
            rows.into_iter().map(|(role, own)| (role, own.iter().chain(&shared).copied().collect())).collect(),
        )
    }
}

impl PermissionMatrix {
    pub fn permits(&self, role: Role, action: ActionName) -> bool {
        self.0.get(&role).is_some_and(|set| set.contains(&action))
    }

    pub fn actions_for(&self, role: Role) -> Vec<ActionName> {
        self.0.get(&role).map(|s| s.iter().copied().collect()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub scenario: ScenarioDef,
    pub seed: u64,
    pub tick_ms: u64,
    pub vitals_sample_every_ms: u64,
}

impl SessionConfig {
    pub fn new(scenario: ScenarioDef, seed: u64) -> Self {
        SessionConfig { scenario, seed, tick_ms: DEFAULT_TICK_MS, vitals_sample_every_ms: DEFAULT_SAMPLE_EVERY_MS }
    }

    fn issues(&self) -> Vec<Issue> {
        let mut issues = validate_scenario(&self.scenario);
        if self.tick_ms == 0 {
            issues.push(Issue { severity: IssueSeverity::Error, path: "tick_ms".into(), message: "tick must be > 0".into() });
        } else if self.vitals_sample_every_ms == 0 || !self.vitals_sample_every_ms.is_multiple_of(self.tick_ms) {
            issues.push(Issue {
                severity: IssueSeverity::Error,
                path: "vitals_sample_every_ms".into(),
                message: format!("sample interval must be a positive multiple of tick_ms ({})", self.tick_ms),
            });
        }
        issues
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Lobby,
    Running,
    Ended,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("invalid session config: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    Config(Vec<Issue>),
    #[error("unknown client `{0}`")]
    ClientUnknown(ClientId),
    #[error("client `{0}` has already joined")]
    AlreadyJoined(ClientId),
    #[error("role {0} is already taken")]
    RoleTaken(Role),
    #[error("session is over")]
    SessionOver,
    #[error("session has not started")]
    NotStarted,
    #[error("spectators are read-only")]
    ReadOnly,
}

/// Live session state. Every mutating call returns the events it appended.
#[derive(Debug, Clone)]
pub struct Session {
    config: SessionConfig,
    clock: SimTime,
    patient: PatientState,
    vitals: Vitals,
    roster: BTreeMap<Role, ClientId>,
    spectators: BTreeSet<ClientId>,
    phase: Phase,
    rng: Prng,
    modulator: Modulator,
    events: Vec<Event>,
    /// Events at and after this index have not been seen by feedback yet.
    feedback_cursor: usize,
}

impl Session {
    pub fn create(config: SessionConfig) -> Result<Self, SessionError> {
        let issues = config.issues();
        if has_errors(&issues) {
            return Err(SessionError::Config(issues.into_iter().filter(|i| i.severity == IssueSeverity::Error).collect()));
        }
        let rhythm = config.scenario.initial_rhythm;
        Ok(Session {
            clock: SimTime::ZERO,
            patient: PatientState::initial(rhythm),
            vitals: rhythm_profile(rhythm),
            roster: BTreeMap::new(),
            spectators: BTreeSet::new(),
            phase: Phase::Lobby,
            rng: Prng::seeded(config.seed),
            modulator: Modulator::new(config.scenario.feedback.modulator.clone()),
            events: Vec::new(),
            feedback_cursor: 0,
            config,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }
    pub fn scenario(&self) -> &ScenarioDef {
        &self.config.scenario
    }
    pub fn clock(&self) -> SimTime {
        self.clock
    }
    pub fn patient(&self) -> &PatientState {
        &self.patient
    }
    pub fn vitals(&self) -> &Vitals {
        &self.vitals
    }
    pub fn phase(&self) -> Phase {
        self.phase
    }
    pub fn roster(&self) -> &BTreeMap<Role, ClientId> {
        &self.roster
    }
    pub fn spectators(&self) -> &BTreeSet<ClientId> {
        &self.spectators
    }
    pub fn modulator(&self) -> &Modulator {
        &self.modulator
    }
    pub fn rng(&self) -> &Prng {
        &self.rng
    }
    /// Every event emitted so far, in seq order.
    pub fn events(&self) -> &[Event] {
        &self.events
    }
    pub fn state_hash(&self) -> u64 {
        state_hash(&self.patient, &self.vitals)
    }

    /// Role held by `client`; spectators report `Role::Spectator`.
    pub fn role_of(&self, client: &str) -> Option<Role> {
        if let Some((role, _)) = self.roster.iter().find(|(_, c)| c.as_str() == client) {
            return Some(*role);
        }
        self.spectators.contains(client).then_some(Role::Spectator)
    }

    fn emit(&mut self, actor: Actor, origin: Origin, payload: Payload) -> Event {
        let event = Event { seq: self.events.len() as u64, time: self.clock, actor, origin, payload };
        self.events.push(event.clone());
        event
    }

    fn emit_transition(&mut self, t: StateTransition) -> Event {
        self.emit(Actor::System, Origin::Internal, Payload::StateTransition(t))
    }

    /// Claims a role. The fourth trainee starts the session.
    pub fn join(&mut self, client: &str, requested: Role) -> Result<Vec<Event>, SessionError> {
        if self.phase == Phase::Ended {
            return Err(SessionError::SessionOver);
        }
        if self.role_of(client).is_some() {
            return Err(SessionError::AlreadyJoined(client.to_string()));
        }
        if requested == Role::Spectator {
            self.spectators.insert(client.to_string());
            return Ok(Vec::new());
        }
        if self.roster.contains_key(&requested) {
            return Err(SessionError::RoleTaken(requested));
        }
        self.roster.insert(requested, client.to_string());
        if self.phase == Phase::Lobby && self.roster.len() == Role::TRAINEES.len() {
            self.phase = Phase::Running;
            let start = SessionStart {
                scenario_id: self.config.scenario.id.clone(),
                seed: self.config.seed,
                initial_rhythm: self.config.scenario.initial_rhythm,
                roster: self.roster.clone(),
            };
            return Ok(vec![self.emit(Actor::System, Origin::Internal, Payload::SessionStart(start))]);
        }
        Ok(Vec::new())
    }

    /// Removes a client. A trainee leaving a running session aborts it.
    pub fn leave(&mut self, client: &str) -> Result<Vec<Event>, SessionError> {
        match self.role_of(client) {
            None => Err(SessionError::ClientUnknown(client.to_string())),
            Some(Role::Spectator) => {
                self.spectators.remove(client);
                Ok(Vec::new())
            }
            Some(role) => {
                self.roster.remove(&role);
                if self.phase == Phase::Running {
                    return self.end_session(EndReason::Aborted).map(|e| vec![e]);
                }
                Ok(Vec::new())
            }
        }
    }

    fn running(&self) -> Result<(), SessionError> {
        match self.phase {
            Phase::Running => Ok(()),
            Phase::Lobby => Err(SessionError::NotStarted),
            Phase::Ended => Err(SessionError::SessionOver),
        }
    }

    /// Submits an action at the current clock. Disallowed actions are
    /// logged as `ActionRejected`.
    pub fn submit_action(&mut self, client: &str, action: ActionKind) -> Result<Vec<Event>, SessionError> {
        self.running()?;
        let role = self.role_of(client).ok_or_else(|| SessionError::ClientUnknown(client.to_string()))?;
        let reject = |s: &mut Self, reason| {
            vec![s.emit(Actor::Role(role), Origin::External, Payload::ActionRejected(ActionRejected { action: action.clone(), reason }))]
        };
        if role == Role::Spectator {
            return Ok(reject(self, RejectReason::SpectatorReadOnly));
        }
        if !self.config.scenario.permissions.permits(role, action.name()) {
            return Ok(reject(self, RejectReason::RoleNotPermitted));
        }
        let physio = &self.config.scenario.physio;
        match physiology::apply_action(&self.patient, &self.vitals, &action, self.clock, &mut self.rng, physio) {
            Err(PhysioError::ActionInvalid(reason)) => Ok(reject(self, reason)),
            Err(PhysioError::Domain(_)) => Ok(reject(self, RejectReason::BadParameter)),
            Ok(outcome) => {
                self.patient = outcome.patient;
                self.vitals = outcome.vitals;
                let mut out =
                    vec![self.emit(Actor::Role(role), Origin::External, Payload::ActionPerformed(ActionPerformed { action: action.clone() }))];
                for t in outcome.transitions {
                    out.push(self.emit_transition(t));
                }
                Ok(out)
            }
        }
    }

    /// Records a live utterance from a trainee at the current clock.
    pub fn record_utterance(
        &mut self,
        client: &str,
        text: String,
        tags: BTreeSet<UtteranceTag>,
        addressee: Option<Role>,
        orders_action: Option<ActionPattern>,
    ) -> Result<Event, SessionError> {
        self.running()?;
        let role = self.role_of(client).ok_or_else(|| SessionError::ClientUnknown(client.to_string()))?;
        if role == Role::Spectator {
            return Err(SessionError::ReadOnly);
        }
        let payload = UtterancePayload { text, tags, addressee, orders_action };
        Ok(self.emit(Actor::Role(role), Origin::External, Payload::Utterance(payload)))
    }

    /// Advances one tick: physiology step, scripted events due in the tick,
    /// periodic vitals sample, then feedback over everything new.
    pub fn tick(&mut self) -> Result<Vec<Event>, SessionError> {
        self.running()?;
        let first = self.events.len();
        let t0 = self.clock;
        let dt = self.config.tick_ms;
        self.clock += dt;

        let scenario = &self.config.scenario;
        let outcome = physiology::step(&self.patient, &self.vitals, dt, self.clock, &mut self.rng, &scenario.physio);
        self.patient = outcome.patient;
        self.vitals = outcome.vitals;
        for t in outcome.transitions {
            self.emit_transition(t);
        }

        let due = scripted_events_due(&self.config.scenario, t0, self.clock).expect("clock is monotone").to_vec();
        for entry in due {
            self.emit(Actor::System, Origin::Internal, Payload::ScriptedEvent(ScriptedEvent { effect: entry.effect.clone() }));
            match entry.effect {
                ScriptedEffect::ForceRhythm { rhythm } => {
                    if let Some(t) = force_rhythm(&mut self.patient, rhythm) {
                        self.emit_transition(t);
                    }
                }
                ScriptedEffect::VitalsOverride { vitals } => self.vitals = vitals.apply(&self.vitals),
                ScriptedEffect::NarrativeCue { .. } => {}
            }
        }

        if self.clock.millis().is_multiple_of(self.config.vitals_sample_every_ms) {
            let vitals = self.vitals;
            self.emit(Actor::System, Origin::Internal, Payload::VitalsSample(VitalsSample { vitals }));
        }

        self.run_feedback();
        Ok(self.events[first..].to_vec())
    }

    fn run_feedback(&mut self) {
        let cursor = self.feedback_cursor;
        let from = SimTime(self.clock.millis().saturating_sub(LOOKBACK_MS));
        let history_start = self.events[..cursor].partition_point(|e| e.time < from);
        let scenario = &self.config.scenario;
        let ctx = FeedbackContext {
            patient: &self.patient,
            vitals: &self.vitals,
            new_events: &self.events[cursor..],
            history: &self.events[history_start..cursor],
            formulary: &scenario.formulary,
            now: self.clock,
        };
        let candidates = evaluate(&scenario.feedback.rules, &ctx);
        let (emitted, next) = modulate(&candidates, &self.modulator, self.clock);
        self.modulator = next;
        for alert in emitted {
            self.emit(Actor::System, Origin::Internal, Payload::AlertEmitted(alert));
        }
        self.feedback_cursor = self.events.len();
    }

    /// Ends a running session with exactly one `SessionEnd`. The end is an
    /// operator or network decision, so it is recorded as an external input.
    pub fn end_session(&mut self, reason: EndReason) -> Result<Event, SessionError> {
        self.running()?;
        self.phase = Phase::Ended;
        Ok(self.emit(Actor::System, Origin::External, Payload::SessionEnd(SessionEnd { reason })))
    }
}
