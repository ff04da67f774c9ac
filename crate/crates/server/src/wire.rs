//! The JSON message protocol. Every frame is one text message holding one
//! `WireMessage`, tagged by its `type` field. Server messages carry the
//! session id.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use codeteam_core::model::{
    ActionKind, ActionPattern, AlertEmitted, EndReason, Event, RejectReason, Role, SimTime, UtteranceTag, Vitals,
};
use codeteam_core::physiology::PatientState;
use codeteam_core::session::{PermissionMatrix, Phase};

pub const PROTOCOL_VERSION: u32 = 1;

/// Recent events carried by a snapshot.
pub const SNAPSHOT_EVENTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DenyReason {
    VersionMismatch,
    RoleTaken,
    AlreadyJoined,
    SessionOver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    /// Sent before the connection is closed for a message preceding Hello.
    ProtocolError,
    Malformed,
    DuplicateHello,
    NotJoined,
    NotStarted,
    SessionOver,
    ReadOnly,
}

/// Session state a late joiner needs to render immediately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub phase: Phase,
    pub scenario_id: String,
    pub clock: SimTime,
    pub patient: PatientState,
    pub vitals: Vitals,
    pub roster: BTreeMap<Role, String>,
    pub spectators: usize,
    pub permissions: PermissionMatrix,
    /// Live state hash as 16 lowercase hex digits.
    pub state_hash: String,
    /// At most [`SNAPSHOT_EVENTS`] most recent events, in seq order.
    pub recent_events: Vec<Event>,
}

pub fn format_hash(h: u64) -> String {
    format!("{h:016x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum WireMessage {
    // client -> server
    Hello {
        protocol_version: u32,
    },
    Join {
        role: Role,
    },
    ActionRequest {
        action: ActionKind,
    },
    UtteranceNote {
        text: String,
        #[serde(default)]
        tags: BTreeSet<UtteranceTag>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        addressee: Option<Role>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        orders_action: Option<ActionPattern>,
    },

    // server -> client
    Joined {
        session_id: String,
        role: Role,
    },
    JoinDenied {
        session_id: String,
        reason: DenyReason,
    },
    EventBroadcast {
        session_id: String,
        event: Event,
    },
    Snapshot {
        session_id: String,
        snapshot: Box<Snapshot>,
    },
    Alert {
        session_id: String,
        time: SimTime,
        alert: AlertEmitted,
    },
    VitalsUpdate {
        session_id: String,
        time: SimTime,
        vitals: Vitals,
    },
    SessionEnded {
        session_id: String,
        reason: EndReason,
    },
    /// Unicast to the sender of a rejected request; `seq` is the logged record.
    ActionRejected {
        session_id: String,
        seq: u64,
        action: ActionKind,
        reason: RejectReason,
    },
    Error {
        session_id: String,
        code: ErrorCode,
        message: String,
    },
}

impl WireMessage {
    pub fn is_client_message(&self) -> bool {
        matches!(
            self,
            WireMessage::Hello { .. }
                | WireMessage::Join { .. }
                | WireMessage::ActionRequest { .. }
                | WireMessage::UtteranceNote { .. }
        )
    }

    pub fn session_id(&self) -> Option<&str> {
        match self {
            WireMessage::Hello { .. }
            | WireMessage::Join { .. }
            | WireMessage::ActionRequest { .. }
            | WireMessage::UtteranceNote { .. } => None,
            WireMessage::Joined { session_id, .. }
            | WireMessage::JoinDenied { session_id, .. }
            | WireMessage::EventBroadcast { session_id, .. }
            | WireMessage::Snapshot { session_id, .. }
            | WireMessage::Alert { session_id, .. }
            | WireMessage::VitalsUpdate { session_id, .. }
            | WireMessage::SessionEnded { session_id, .. }
            | WireMessage::ActionRejected { session_id, .. }
            | WireMessage::Error { session_id, .. } => Some(session_id),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages hold only finite values")
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
