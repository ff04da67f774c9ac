//! Event-sourced session logs.
//!
//! A `.cts` file is one JSON header line followed by one canonical event
//! record per line. Sequence numbers are gapless from 0 and times never
//! decrease.

mod ingest;
mod replay;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{decode_event, encode_event, DecodeError, EncodingError, Event, EventKind, Role, SimTime};
use crate::scenario::ScenarioDef;
use crate::session::{Session, SessionConfig};

pub use ingest::{
    ingest_telemetry, ingest_transcript, parse_telemetry_ndjson, parse_transcript_ndjson, IngestError, TelemetrySample,
    Utterance,
};
pub use replay::{state_at, verify_determinism, ReplayError, ReplayState, Replayer, Verdict};

pub const LOG_FORMAT: &str = "cts";
pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub format: String,
    pub schema_version: u32,
    pub scenario_id: String,
    pub seed: u64,
    pub tick_ms: u64,
    pub vitals_sample_every_ms: u64,
    pub roster: BTreeMap<Role, String>,
    /// Wall-clock start, bookkeeping only; never read back into the simulation.
    pub started_at: Option<String>,
    /// The scenario the session ran, so a log replays on its own.
    pub scenario: ScenarioDef,
}

impl LogHeader {
    pub fn for_session(session: &Session, started_at: Option<String>) -> Self {
        let cfg = session.config();
        LogHeader {
            format: LOG_FORMAT.into(),
            schema_version: LOG_SCHEMA_VERSION,
            scenario_id: cfg.scenario.id.clone(),
            seed: cfg.seed,
            tick_ms: cfg.tick_ms,
            vitals_sample_every_ms: cfg.vitals_sample_every_ms,
            roster: session.roster().clone(),
            started_at,
            scenario: cfg.scenario.clone(),
        }
    }

    /// Session configuration for re-simulation, optionally with another scenario.
    pub fn session_config(&self, scenario: Option<&ScenarioDef>) -> SessionConfig {
        SessionConfig {
            scenario: scenario.unwrap_or(&self.scenario).clone(),
            seed: self.seed,
            tick_ms: self.tick_ms,
            vitals_sample_every_ms: self.vitals_sample_every_ms,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("header serializes")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IntegrityError {
    #[error("seq gap: expected {expected}, found {found}")]
    SeqGap { expected: u64, found: u64 },
    #[error("time regression at seq {seq}: {time} before {previous}")]
    TimeRegression { seq: u64, time: SimTime, previous: SimTime },
    /// `line` is 1-based and counts the header.
    #[error("line {line}: {source}")]
    Decode { line: usize, source: DecodeError },
    #[error("bad header: {0}")]
    Header(String),
    #[error("{0}")]
    Structure(String),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl IntegrityError {
    /// Seq of the offending record, where one is known.
    pub fn seq(&self) -> Option<u64> {
        match self {
            IntegrityError::SeqGap { expected, .. } => Some(*expected),
            IntegrityError::TimeRegression { seq, .. } => Some(*seq),
            IntegrityError::Decode { line, .. } => line.checked_sub(2).map(|s| s as u64),
            _ => None,
        }
    }
}

fn check_next(last: Option<&Event>, e: &Event) -> Result<(), IntegrityError> {
    let expected = last.map_or(0, |l| l.seq + 1);
    if e.seq != expected {
        return Err(IntegrityError::SeqGap { expected, found: e.seq });
    }
    if let Some(l) = last {
        if e.time < l.time {
            return Err(IntegrityError::TimeRegression { seq: e.seq, time: e.time, previous: l.time });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub header: LogHeader,
    pub events: Vec<Event>,
}

impl SessionLog {
    pub fn new(header: LogHeader) -> Self {
        SessionLog { header, events: Vec::new() }
    }

    /// Appends one event, enforcing gapless seq and non-decreasing time.
    pub fn append(&mut self, e: Event) -> Result<(), IntegrityError> {
        check_next(self.events.last(), &e)?;
        self.events.push(e);
        Ok(())
    }

    pub fn session_end(&self) -> Option<&Event> {
        self.events.iter().find(|e| e.kind() == EventKind::SessionEnd)
    }

    /// Time of SessionEnd, or of the last event for an unfinished log.
    pub fn end_time(&self) -> SimTime {
        self.session_end().or(self.events.last()).map_or(SimTime::ZERO, |e| e.time)
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<(), IntegrityError> {
        let mut prev: Option<&Event> = None;
        for e in &self.events {
            check_next(prev, e)?;
            prev = Some(e);
        }
        let count = |k| self.events.iter().filter(|e| e.kind() == k).count();
        if count(EventKind::SessionStart) != 1 {
            return Err(IntegrityError::Structure("log must contain exactly one SessionStart".into()));
        }
        if count(EventKind::SessionEnd) > 1 {
            return Err(IntegrityError::Structure("log contains more than one SessionEnd".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> Result<String, IntegrityError> {
        let mut out = self.header.to_line();
        out.push('\n');
        for e in &self.events {
            out.push_str(std::str::from_utf8(&encode_event(e)?).expect("canonical records are UTF-8"));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self, IntegrityError> {
        let mut lines = text.lines();
        let header_line = lines.next().ok_or_else(|| IntegrityError::Header("empty log".into()))?;
        let header: LogHeader =
            serde_json::from_str(header_line).map_err(|e| IntegrityError::Header(e.to_string()))?;
        if header.format != LOG_FORMAT || header.schema_version != LOG_SCHEMA_VERSION {
            return Err(IntegrityError::Header(format!(
                "unsupported format {} v{}",
                header.format, header.schema_version
            )));
        }
        let mut log = SessionLog::new(header);
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let e = decode_event(line.as_bytes()).map_err(|source| IntegrityError::Decode { line: i + 2, source })?;
            log.append(e)?;
        }
        Ok(log)
    }

    pub fn read(path: &Path) -> Result<Self, IntegrityError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), IntegrityError> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }
}

/// Append-only file writer; every record is flushed as it is written.
pub struct LogWriter {
    out: BufWriter<File>,
    last: Option<Event>,
}

impl LogWriter {
    pub fn create(path: &Path, header: &LogHeader) -> Result<Self, IntegrityError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", header.to_line())?;
        out.flush()?;
        Ok(LogWriter { out, last: None })
    }

    pub fn append(&mut self, e: &Event) -> Result<(), IntegrityError> {
        check_next(self.last.as_ref(), e)?;
        let bytes = encode_event(e)?;
        self.out.write_all(&bytes)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        self.last = Some(e.clone());
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), IntegrityError> {
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        Ok(())
    }
}
