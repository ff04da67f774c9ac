//! Post-hoc merge of biometric telemetry and speech transcripts.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::SessionLog;
use crate::model::{
    ActionPattern, Actor, Event, Origin, Payload, Role, SimTime, TelemetryChannel, TelemetryPayload, UtterancePayload,
    UtteranceTag,
};

/// One biometric reading, already aligned to simulation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetrySample {
    pub user: Role,
    pub channel: TelemetryChannel,
    pub time: SimTime,
    pub value: f64,
}

/// One transcribed utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub speaker: Role,
    pub time: SimTime,
    pub text: String,
    #[serde(default)]
    pub tags: BTreeSet<UtteranceTag>,
    #[serde(default)]
    pub addressee: Option<Role>,
    #[serde(default)]
    pub orders_action: Option<ActionPattern>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IngestError {
    #[error("{what} {index} at {time} is outside the session [0, {end}]")]
    Range { what: &'static str, index: usize, time: SimTime, end: SimTime },
    #[error("{what} {index}: {message}")]
    Validation { what: &'static str, index: usize, message: String },
    #[error("{what} {index} duplicates an existing record")]
    Duplicate { what: &'static str, index: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn parse_ndjson<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, IngestError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| IngestError::Parse { line: i + 1, message: e.to_string() }))
        .collect()
}

pub fn parse_telemetry_ndjson(text: &str) -> Result<Vec<TelemetrySample>, IngestError> {
    parse_ndjson(text)
}

pub fn parse_transcript_ndjson(text: &str) -> Result<Vec<Utterance>, IngestError> {
    parse_ndjson(text)
}

fn check_speaker(what: &'static str, index: usize, role: Role) -> Result<(), IngestError> {
    if role.is_trainee() {
        Ok(())
    } else {
        Err(IngestError::Validation { what, index, message: "only trainee roles produce records".into() })
    }
}

fn check_range(what: &'static str, index: usize, time: SimTime, end: SimTime) -> Result<(), IngestError> {
    if time > end {
        Err(IngestError::Range { what, index, time, end })
    } else {
        Ok(())
    }
}

/// Inserts `incoming` (already ordered among themselves) after existing
/// events of equal time and renumbers the whole log.
fn merge(log: &SessionLog, incoming: Vec<Event>) -> SessionLog {
    let mut merged = Vec::with_capacity(log.events.len() + incoming.len());
    let mut existing = log.events.iter().cloned().peekable();
    for new in incoming {
        while let Some(e) = existing.next_if(|e| e.time <= new.time) {
            merged.push(e);
        }
        merged.push(new);
    }
    merged.extend(existing);
    for (i, e) in merged.iter_mut().enumerate() {
        e.seq = i as u64;
    }
    SessionLog { header: log.header.clone(), events: merged }
}

/// Merges telemetry samples as `TelemetrySample` events.
///
/// Among equal times, existing events come first, then samples ordered by
/// channel name, wearer and input position.
pub fn ingest_telemetry(log: &SessionLog, samples: &[TelemetrySample]) -> Result<SessionLog, IngestError> {
    const WHAT: &str = "telemetry sample";
    let end = log.end_time();
    let mut seen: HashSet<(Role, TelemetryChannel, SimTime)> = log
        .events
        .iter()
        .filter_map(|e| match (&e.payload, e.actor) {
            (Payload::TelemetrySample(t), Actor::Role(r)) => Some((r, t.channel, e.time)),
            _ => None,
        })
        .collect();
    for (i, s) in samples.iter().enumerate() {
        check_speaker(WHAT, i, s.user)?;
        check_range(WHAT, i, s.time, end)?;
        let invalid = |message: String| IngestError::Validation { what: WHAT, index: i, message };
        if !s.value.is_finite() {
            return Err(invalid("value must be finite".into()));
        }
        match s.channel {
            TelemetryChannel::Temperature => return Err(invalid("temperature channel is reserved".into())),
            TelemetryChannel::GazeX | TelemetryChannel::GazeY | TelemetryChannel::CognitiveLoad
                if !(0.0..=1.0).contains(&s.value) =>
            {
                return Err(invalid(format!("{} must lie in [0, 1]", s.channel.wire_name())));
            }
            TelemetryChannel::HeartRate | TelemetryChannel::PupilDiameter if s.value < 0.0 => {
                return Err(invalid(format!("{} must be >= 0", s.channel.wire_name())));
            }
            _ => {}
        }
        if !seen.insert((s.user, s.channel, s.time)) {
            return Err(IngestError::Duplicate { what: WHAT, index: i });
        }
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&samples[a], &samples[b]);
        (x.time, x.channel.wire_name(), x.user).cmp(&(y.time, y.channel.wire_name(), y.user)).then(a.cmp(&b))
    });
    let incoming = order
        .into_iter()
        .map(|i| {
            let s = &samples[i];
            Event {
                seq: 0,
                time: s.time,
                actor: Actor::Role(s.user),
                origin: Origin::External,
                payload: Payload::TelemetrySample(TelemetryPayload { channel: s.channel, value: s.value }),
            }
        })
        .collect();
    Ok(merge(log, incoming))
}

/// Merges transcript lines as `Utterance` events. Equal-time utterances
/// keep their input order, after existing events.
pub fn ingest_transcript(log: &SessionLog, utterances: &[Utterance]) -> Result<SessionLog, IngestError> {
    const WHAT: &str = "utterance";
    let end = log.end_time();
    let mut seen: HashSet<(Role, SimTime, String)> = log
        .events
        .iter()
        .filter_map(|e| match (&e.payload, e.actor) {
            (Payload::Utterance(u), Actor::Role(r)) => Some((r, e.time, u.text.clone())),
            _ => None,
        })
        .collect();
    for (i, u) in utterances.iter().enumerate() {
        check_speaker(WHAT, i, u.speaker)?;
        check_range(WHAT, i, u.time, end)?;
        if u.text.trim().is_empty() {
            return Err(IngestError::Validation { what: WHAT, index: i, message: "text must not be empty".into() });
        }
        if !seen.insert((u.speaker, u.time, u.text.clone())) {
            return Err(IngestError::Duplicate { what: WHAT, index: i });
        }
    }
    let mut order: Vec<usize> = (0..utterances.len()).collect();
    order.sort_by_key(|&i| (utterances[i].time, i));
    let incoming = order
        .into_iter()
        .map(|i| {
            let u = &utterances[i];
            Event {
                seq: 0,
                time: u.time,
                actor: Actor::Role(u.speaker),
                origin: Origin::External,
                payload: Payload::Utterance(UtterancePayload {
                    text: u.text.clone(),
                    tags: u.tags.clone(),
                    addressee: u.addressee,
                    orders_action: u.orders_action.clone(),
                }),
            }
        })
        .collect();
    Ok(merge(log, incoming))
}
