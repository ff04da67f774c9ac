//! Canonical single-line event encoding.
//!
//! An event encodes as one JSON object with the fixed key order
//! `seq, time, actor, kind, origin, payload`. Payload keys follow the
//! declaration order of the payload structs and floats use the shortest
//! round-tripping representation with `-0.0` folded to `0.0`. The same bytes
//! are the log line format and the wire broadcast format.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::clinical::Vitals;
use super::event::{Actor, Event, EventKind, Origin, Payload};
use super::time::SimTime;
use crate::physiology::PatientState;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodingError {
    #[error("field `{field}` of event {seq} is not finite")]
    NonFinite { seq: u64, field: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("malformed event at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("unknown event kind `{tag}`")]
    UnknownKind { tag: String },
    #[error("non-canonical event encoding at byte {offset}")]
    NonCanonical { offset: usize },
}

impl DecodeError {
    pub fn offset(&self) -> Option<usize> {
        match self {
            DecodeError::Malformed { offset, .. } | DecodeError::NonCanonical { offset } => Some(*offset),
            DecodeError::UnknownKind { .. } => None,
        }
    }
}

#[derive(Serialize)]
struct RecordOut<'a> {
    seq: u64,
    time: SimTime,
    actor: Actor,
    kind: EventKind,
    origin: Origin,
    payload: &'a Payload,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    seq: u64,
    time: SimTime,
    actor: Actor,
    kind: String,
    origin: Origin,
    payload: serde_json::Value,
}

/// Encodes an event as its canonical single-line record (no trailing newline).
pub fn encode_event(event: &Event) -> Result<Vec<u8>, EncodingError> {
    if let Some(field) = event.payload.first_non_finite() {
        return Err(EncodingError::NonFinite { seq: event.seq, field });
    }
    let record = RecordOut {
        seq: event.seq,
        time: event.time,
        actor: event.actor,
        kind: event.kind(),
        origin: event.origin,
        payload: &event.payload,
    };
    Ok(serde_json::to_vec(&record).expect("event records always serialize"))
}

/// Encodes to a `String`; the canonical form is always UTF-8.
pub fn encode_event_string(event: &Event) -> Result<String, EncodingError> {
    encode_event(event).map(|b| String::from_utf8(b).expect("JSON output is UTF-8"))
}

/// Decodes a canonical record. Input that parses but would re-encode to
/// different bytes is rejected as non-canonical.
pub fn decode_event(bytes: &[u8]) -> Result<Event, DecodeError> {
    let record: RecordIn = serde_json::from_slice(bytes).map_err(|e| malformed(bytes, &e))?;
    let payload = decode_payload(&record.kind, record.payload)?;
    let event = Event { seq: record.seq, time: record.time, actor: record.actor, origin: record.origin, payload };
    let canonical = encode_event(&event).map_err(|e| DecodeError::Malformed { offset: 0, message: e.to_string() })?;
    if canonical != bytes {
        let offset = canonical.iter().zip(bytes).take_while(|(a, b)| a == b).count();
        return Err(DecodeError::NonCanonical { offset });
    }
    Ok(event)
}

/// Serializes in canonical key order; non-finite values are an error.
impl Serialize for Event {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        if let Some(field) = self.payload.first_non_finite() {
            return Err(serde::ser::Error::custom(EncodingError::NonFinite { seq: self.seq, field }));
        }
        RecordOut {
            seq: self.seq,
            time: self.time,
            actor: self.actor,
            kind: self.kind(),
            origin: self.origin,
            payload: &self.payload,
        }
        .serialize(ser)
    }
}

/// Structural decoding for embedded records (wire messages). Unlike
/// [`decode_event`] it accepts any key order.
impl<'de> Deserialize<'de> for Event {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let record = RecordIn::deserialize(de)?;
        let payload = decode_payload(&record.kind, record.payload).map_err(serde::de::Error::custom)?;
        Ok(Event { seq: record.seq, time: record.time, actor: record.actor, origin: record.origin, payload })
    }
}

fn decode_payload(tag: &str, value: serde_json::Value) -> Result<Payload, DecodeError> {
    let kind: EventKind = tag.parse().map_err(|_| DecodeError::UnknownKind { tag: tag.to_string() })?;
    fn body<T: serde::de::DeserializeOwned>(value: serde_json::Value) -> Result<T, DecodeError> {
        serde_json::from_value(value)
            .map_err(|e| DecodeError::Malformed { offset: 0, message: format!("payload: {e}") })
    }
    Ok(match kind {
        EventKind::ActionPerformed => Payload::ActionPerformed(body(value)?),
        EventKind::ActionRejected => Payload::ActionRejected(body(value)?),
        EventKind::StateTransition => Payload::StateTransition(body(value)?),
        EventKind::VitalsSample => Payload::VitalsSample(body(value)?),
        EventKind::Utterance => Payload::Utterance(body(value)?),
        EventKind::TelemetrySample => Payload::TelemetrySample(body(value)?),
        EventKind::AlertEmitted => Payload::AlertEmitted(body(value)?),
        EventKind::ScriptedEvent => Payload::ScriptedEvent(body(value)?),
        EventKind::SessionStart => Payload::SessionStart(body(value)?),
        EventKind::SessionEnd => Payload::SessionEnd(body(value)?),
    })
}

fn malformed(bytes: &[u8], err: &serde_json::Error) -> DecodeError {
    // Column is 1-based and byte-counted within the line.
    let line_start = if err.line() <= 1 {
        0
    } else {
        bytes
            .iter()
            .enumerate()
            .filter(|(_, b)| **b == b'\n')
            .nth(err.line() - 2)
            .map_or(bytes.len(), |(i, _)| i + 1)
    };
    let offset = (line_start + err.column().saturating_sub(1)).min(bytes.len());
    DecodeError::Malformed { offset, message: err.to_string() }
}

#[derive(Serialize)]
struct HashInput<'a> {
    patient: &'a PatientState,
    vitals: &'a Vitals,
}

/// 64-bit digest of patient state and vitals: the first eight bytes
/// (big-endian) of SHA-256 over the canonical JSON of `{patient, vitals}`.
pub fn state_hash(patient: &PatientState, vitals: &Vitals) -> u64 {
    let bytes = serde_json::to_vec(&HashInput { patient, vitals }).expect("patient state serializes");
    let digest = Sha256::digest(&bytes);
    u64::from_be_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}
