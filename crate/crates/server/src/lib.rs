//! Live session server: clients join roles over WebSocket, the server
//! ticks the session on a timer and fans every appended event out to all
//! joined clients. `GET /log` and `GET /report` retrieve the recorded log
//! and, once the session has ended, its team report.

pub mod hub;
pub mod net;
pub mod wire;

pub use hub::{Hub, HubView, Outbound, ShutdownSummary, SnapshotError, Unavailable};
pub use net::{serve, ServerConfig, ServerError, ServerHandle, DEFAULT_QUEUE_DEPTH};
pub use wire::{DenyReason, ErrorCode, Snapshot, WireMessage, PROTOCOL_VERSION, SNAPSHOT_EVENTS};
