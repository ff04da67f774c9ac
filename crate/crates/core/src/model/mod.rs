//! Domain vocabulary, logical time, the event schema and its canonical encoding.

mod action;
mod clinical;
mod codec;
mod event;
mod time;

pub use action::{ActionKind, ActionName, ActionPattern};
pub use clinical::{Rhythm, Role, UnknownName, Vitals, VitalsError};
pub use codec::{decode_event, encode_event, encode_event_string, state_hash, DecodeError, EncodingError};
pub use event::{
    ActionPerformed, ActionRejected, Actor, AlertCategory, AlertEmitted, AlertTarget, EndReason, Event, EventKind,
    Origin, Payload, RejectReason, ScriptedEffect, ScriptedEvent, SessionEnd, SessionStart, Severity,
    StateTransition, TelemetryChannel, TelemetryPayload, TransitionCause, UtterancePayload, UtteranceTag,
    VitalsPatch, VitalsSample,
};
pub use time::SimTime;

pub(crate) use clinical::canonical_f64;
pub(crate) use time::secs_to_millis;
