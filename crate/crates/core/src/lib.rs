//! Engine for a four-person cardiac-arrest team simulation: patient model,
//! authoritative session, feedback rules, event log and team analytics.

pub mod analytics;
pub mod bots;
pub mod feedback;
pub mod logstore;
pub mod model;
pub mod physiology;
pub mod scenario;
pub mod session;
