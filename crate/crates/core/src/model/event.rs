use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::action::{ActionKind, ActionPattern};
use super::clinical::{canonical_f64, named_enum, Rhythm, Role, UnknownName, Vitals};
use super::time::SimTime;

/// Who caused an event: a participant role or the engine itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Actor {
    Role(Role),
    System,
}

impl Actor {
    pub fn role(self) -> Option<Role> {
        match self {
            Actor::Role(r) => Some(r),
            Actor::System => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Actor::Role(r) => r.as_str(),
            Actor::System => "System",
        }
    }
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Actor {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "System" {
            return Ok(Actor::System);
        }
        s.parse::<Role>()
            .map(Actor::Role)
            .map_err(|_| UnknownName { what: "Actor", token: s.to_string() })
    }
}

impl From<Role> for Actor {
    fn from(r: Role) -> Self {
        Actor::Role(r)
    }
}

impl Serialize for Actor {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Actor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

named_enum! {
    /// External events are recorded inputs; Internal events are reproducible engine outputs.
    pub enum Origin {
        External,
        Internal,
    }
}

named_enum! {
    pub enum EventKind {
        ActionPerformed,
        ActionRejected,
        StateTransition,
        VitalsSample,
        Utterance,
        TelemetrySample,
        AlertEmitted,
        ScriptedEvent,
        SessionStart,
        SessionEnd,
    }
}

named_enum! {
    pub enum RejectReason {
        RoleNotPermitted,
        SpectatorReadOnly,
        NotCharged,
        NoPads,
        BadParameter,
    }
}

named_enum! {
    pub enum TransitionCause {
        Shock,
        Deterioration,
        DrugResponse,
        ReArrest,
        Scripted,
    }
}

named_enum! {
    pub enum UtteranceTag {
        Directive,
        Acknowledgement,
        Report,
    }
}

named_enum! {
    /// Biometric channel. `temperature` is reserved and rejected on ingestion.
    #[serde(rename_all = "snake_case")]
    pub enum TelemetryChannel {
        GazeX,
        GazeY,
        HeartRate,
        PupilDiameter,
        CognitiveLoad,
        Temperature,
    }
}

impl TelemetryChannel {
    /// Wire name, as used in the telemetry input format.
    pub fn wire_name(self) -> &'static str {
        match self {
            TelemetryChannel::GazeX => "gaze_x",
            TelemetryChannel::GazeY => "gaze_y",
            TelemetryChannel::HeartRate => "heart_rate",
            TelemetryChannel::PupilDiameter => "pupil_diameter",
            TelemetryChannel::CognitiveLoad => "cognitive_load",
            TelemetryChannel::Temperature => "temperature",
        }
    }
}

named_enum! {
    pub enum AlertCategory {
        Medication,
        Cpr,
        Defibrillation,
        Protocol,
    }
}

named_enum! {
    pub enum Severity {
        Info,
        Warning,
        Critical,
    }
}

named_enum! {
    pub enum EndReason {
        Completed,
        Aborted,
    }
}

/// Recipient of an alert: one role or the whole team.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AlertTarget {
    Role(Role),
    Team,
}

/// Partial vitals used by scripted overrides; absent fields keep their value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitalsPatch {
    #[serde(default, skip_serializing_if = "Option::is_none", serialize_with = "canonical_opt_f64")]
    pub heart_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", serialize_with = "canonical_opt_f64")]
    pub spo2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", serialize_with = "canonical_opt_f64")]
    pub etco2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", serialize_with = "canonical_opt_f64")]
    pub bp_sys: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", serialize_with = "canonical_opt_f64")]
    pub bp_dia: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", serialize_with = "canonical_opt_f64")]
    pub resp_rate: Option<f64>,
}

impl VitalsPatch {
    pub fn apply(&self, v: &Vitals) -> Vitals {
        Vitals {
            heart_rate: self.heart_rate.unwrap_or(v.heart_rate),
            spo2: self.spo2.unwrap_or(v.spo2),
            etco2: self.etco2.unwrap_or(v.etco2),
            bp_sys: self.bp_sys.unwrap_or(v.bp_sys),
            bp_dia: self.bp_dia.unwrap_or(v.bp_dia),
            resp_rate: self.resp_rate.unwrap_or(v.resp_rate),
        }
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("heart_rate", self.heart_rate),
            ("spo2", self.spo2),
            ("etco2", self.etco2),
            ("bp_sys", self.bp_sys),
            ("bp_dia", self.bp_dia),
            ("resp_rate", self.resp_rate),
        ]
        .into_iter()
        .find(|(_, v)| v.is_some_and(|x| !x.is_finite()))
        .map(|(name, _)| name)
    }
}

fn canonical_opt_f64<S: Serializer>(value: &Option<f64>, serializer: S) -> Result<S::Ok, S::Error> {
    match value {
        Some(v) => canonical_f64(v, serializer),
        None => serializer.serialize_none(),
    }
}

/// Effect of a pre-programmed scenario event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum ScriptedEffect {
    ForceRhythm { rhythm: Rhythm },
    VitalsOverride { vitals: VitalsPatch },
    NarrativeCue { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionPerformed {
    pub action: ActionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionRejected {
    pub action: ActionKind,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateTransition {
    pub from: Rhythm,
    pub to: Rhythm,
    pub cause: TransitionCause,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitalsSample {
    pub vitals: Vitals,
}

/// A transcribed (or typed) utterance. The speaker is the event actor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtterancePayload {
    pub text: String,
    pub tags: BTreeSet<UtteranceTag>,
    pub addressee: Option<Role>,
    pub orders_action: Option<ActionPattern>,
}

/// One biometric reading. The wearer is the event actor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetryPayload {
    pub channel: TelemetryChannel,
    #[serde(serialize_with = "canonical_f64")]
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertEmitted {
    pub rule_id: String,
    pub category: AlertCategory,
    pub severity: Severity,
    pub message: String,
    pub target: AlertTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedEvent {
    pub effect: ScriptedEffect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionStart {
    pub scenario_id: String,
    pub seed: u64,
    pub initial_rhythm: Rhythm,
    pub roster: BTreeMap<Role, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionEnd {
    pub reason: EndReason,
}

/// Kind-specific event body.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Payload {
    ActionPerformed(ActionPerformed),
    ActionRejected(ActionRejected),
    StateTransition(StateTransition),
    VitalsSample(VitalsSample),
    Utterance(UtterancePayload),
    TelemetrySample(TelemetryPayload),
    AlertEmitted(AlertEmitted),
    ScriptedEvent(ScriptedEvent),
    SessionStart(SessionStart),
    SessionEnd(SessionEnd),
}

impl Payload {
    pub fn kind(&self) -> EventKind {
        match self {
            Payload::ActionPerformed(_) => EventKind::ActionPerformed,
            Payload::ActionRejected(_) => EventKind::ActionRejected,
            Payload::StateTransition(_) => EventKind::StateTransition,
            Payload::VitalsSample(_) => EventKind::VitalsSample,
            Payload::Utterance(_) => EventKind::Utterance,
            Payload::TelemetrySample(_) => EventKind::TelemetrySample,
            Payload::AlertEmitted(_) => EventKind::AlertEmitted,
            Payload::ScriptedEvent(_) => EventKind::ScriptedEvent,
            Payload::SessionStart(_) => EventKind::SessionStart,
            Payload::SessionEnd(_) => EventKind::SessionEnd,
        }
    }

    /// Name of the first numeric field that is NaN or infinite.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        match self {
            Payload::ActionPerformed(p) => p.action.first_non_finite(),
            Payload::ActionRejected(p) => p.action.first_non_finite(),
            Payload::VitalsSample(p) => p.vitals.first_non_finite(),
            Payload::TelemetrySample(p) => (!p.value.is_finite()).then_some("value"),
            Payload::ScriptedEvent(ScriptedEvent { effect: ScriptedEffect::VitalsOverride { vitals } }) => {
                vitals.first_non_finite()
            }
            _ => None,
        }
    }
}

/// The single time-stamped unit of everything that happens in a session.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub seq: u64,
    pub time: SimTime,
    pub actor: Actor,
    pub origin: Origin,
    pub payload: Payload,
}

impl Event {
    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }

    pub fn is_external(&self) -> bool {
        self.origin == Origin::External
    }

    /// Events produced by the simulation itself (everything except ingested
    /// or live communication and biometric records).
    pub fn is_simulation_event(&self) -> bool {
        !matches!(self.kind(), EventKind::Utterance | EventKind::TelemetrySample)
    }

    pub fn transition(&self) -> Option<&StateTransition> {
        match &self.payload {
            Payload::StateTransition(t) => Some(t),
            _ => None,
        }
    }

    pub fn performed_action(&self) -> Option<&ActionKind> {
        match &self.payload {
            Payload::ActionPerformed(p) => Some(&p.action),
            _ => None,
        }
    }

    pub fn utterance(&self) -> Option<&UtterancePayload> {
        match &self.payload {
            Payload::Utterance(u) => Some(u),
            _ => None,
        }
    }

    pub fn alert(&self) -> Option<&AlertEmitted> {
        match &self.payload {
            Payload::AlertEmitted(a) => Some(a),
            _ => None,
        }
    }
}
