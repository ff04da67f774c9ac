//! Post-session team metrics and the debriefing report.
//!
//! Every function here is a pure function of a closed log (plus the
//! scenario). Episodes are delimited by `StateTransition` positions in the
//! log, so an action logged before a same-time transition belongs to the
//! earlier episode.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::logstore::{SessionLog, Utterance};
use crate::model::{
    ActionKind, ActionPattern, AlertCategory, Actor, EventKind, Payload, RejectReason, Rhythm, Role, Severity, SimTime,
    UtteranceTag,
};
use crate::scenario::{LearningPoint, ScenarioDef};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_ACK_WINDOW_MS: u64 = 5_000;
pub const DEFAULT_REPORT_WINDOW_MS: u64 = 60_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("incomplete log: {0}")]
    IncompleteLog(String),
}

/// One uninterrupted stay in a rhythm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub index: usize,
    pub rhythm: Rhythm,
    pub onset: SimTime,
    pub end: SimTime,
    /// Log positions `[first, last)` of events inside the episode.
    #[serde(skip)]
    pub first: usize,
    #[serde(skip)]
    pub last: usize,
}

/// Rhythm episodes in log order, starting at `SessionStart`.
pub fn episodes(log: &SessionLog) -> Vec<Episode> {
    let Some(start) = log.events.iter().position(|e| e.kind() == EventKind::SessionStart) else {
        return Vec::new();
    };
    let initial = match &log.events[start].payload {
        Payload::SessionStart(s) => s.initial_rhythm,
        _ => unreachable!(),
    };
    let end_time = log.end_time();
    let mut out = Vec::new();
    let mut current = (initial, log.events[start].time, start + 1);
    for (i, e) in log.events.iter().enumerate().skip(start + 1) {
        if let Some(t) = e.transition() {
            out.push(Episode { index: out.len(), rhythm: current.0, onset: current.1, end: e.time, first: current.2, last: i });
            current = (t.to, e.time, i + 1);
        }
    }
    out.push(Episode {
        index: out.len(),
        rhythm: current.0,
        onset: current.1,
        end: end_time,
        first: current.2,
        last: log.events.len(),
    });
    out
}

/// Utterance events as transcript records, in log order.
pub fn utterances(log: &SessionLog) -> Vec<Utterance> {
    log.events
        .iter()
        .filter_map(|e| {
            let u = e.utterance()?;
            Some(Utterance {
                speaker: e.actor.role()?,
                time: e.time,
                text: u.text.clone(),
                tags: u.tags.clone(),
                addressee: u.addressee,
                orders_action: u.orders_action.clone(),
            })
        })
        .collect()
}

fn session_span(log: &SessionLog) -> (SimTime, SimTime) {
    let start = log.events.iter().find(|e| e.kind() == EventKind::SessionStart).map_or(SimTime::ZERO, |e| e.time);
    (start, log.end_time())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommFrequency {
    pub from: SimTime,
    pub to: SimTime,
    /// Utterances per minute.
    pub per_role: BTreeMap<Role, f64>,
    pub team: f64,
}

/// Utterances per minute per trainee and for the team. With a window,
/// only utterances in `[from, to)` count; otherwise the whole session.
pub fn comm_frequency(log: &SessionLog, window: Option<(SimTime, SimTime)>) -> Result<CommFrequency, AnalyticsError> {
    let (from, to) = window.unwrap_or_else(|| session_span(log));
    if to <= from {
        return Err(AnalyticsError::Domain(format!("elapsed time from {from} to {to} is zero")));
    }
    let minutes = to.since(from) as f64 / 60_000.0;
    let mut counts: BTreeMap<Role, u64> = Role::TRAINEES.iter().map(|r| (*r, 0)).collect();
    for u in utterances(log) {
        let inside = match window {
            Some(_) => u.time >= from && u.time < to,
            None => true,
        };
        if inside {
            *counts.entry(u.speaker).or_default() += 1;
        }
    }
    let total: u64 = counts.values().sum();
    Ok(CommFrequency {
        from,
        to,
        per_role: counts.into_iter().map(|(r, c)| (r, c as f64 / minutes)).collect(),
        team: total as f64 / minutes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDistribution {
    /// Exact performed-action counts; shares are `count / total`.
    pub counts: BTreeMap<Role, u64>,
    pub total: u64,
    pub shares: BTreeMap<Role, f64>,
    /// Shannon entropy of the shares normalized by ln 4, in `[0, 1]`.
    pub balance: f64,
}

pub fn balance_of(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let h: f64 = counts
        .iter()
        .filter(|c| **c > 0)
        .map(|c| {
            let p = *c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    (h / (Role::TRAINEES.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Share of performed actions per trainee and the balance score.
pub fn task_distribution(log: &SessionLog) -> Result<TaskDistribution, AnalyticsError> {
    let mut counts: BTreeMap<Role, u64> = Role::TRAINEES.iter().map(|r| (*r, 0)).collect();
    for e in &log.events {
        if let (Payload::ActionPerformed(_), Actor::Role(r)) = (&e.payload, e.actor) {
            if let Some(c) = counts.get_mut(&r) {
                *c += 1;
            }
        }
    }
    let total: u64 = counts.values().sum();
    if total == 0 {
        return Err(AnalyticsError::Domain("no performed actions".into()));
    }
    let shares = counts.iter().map(|(r, c)| (*r, *c as f64 / total as f64)).collect();
    let balance = balance_of(&counts.values().copied().collect::<Vec<_>>());
    Ok(TaskDistribution { counts, total, shares, balance })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellStatus {
    Done,
    DoneLate,
    Missed,
}

/// One (state episode, required action) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub episode: usize,
    pub rhythm: Rhythm,
    pub onset: SimTime,
    pub action: ActionPattern,
    pub window_ms: Option<u64>,
    /// First matching performance minus episode onset.
    pub latency_ms: Option<u64>,
    pub status: CellStatus,
}

/// Required-action outcome for every visited episode.
pub fn coverage(log: &SessionLog, scenario: &ScenarioDef) -> Vec<CoverageCell> {
    let mut cells = Vec::new();
    for ep in episodes(log) {
        for req in scenario.required.iter().filter(|r| r.state == ep.rhythm) {
            let first = log.events[ep.first..ep.last]
                .iter()
                .find(|e| e.performed_action().is_some_and(|a| req.action.matches(a)));
            let latency_ms = first.map(|e| e.time.since(ep.onset));
            let status = match (latency_ms, req.window_ms) {
                (None, _) => CellStatus::Missed,
                (Some(l), Some(w)) if l > w => CellStatus::DoneLate,
                _ => CellStatus::Done,
            };
            cells.push(CoverageCell {
                episode: ep.index,
                rhythm: ep.rhythm,
                onset: ep.onset,
                action: req.action.clone(),
                window_ms: req.window_ms,
                latency_ms,
                status,
            });
        }
    }
    cells
}

/// Latency from a directive naming an action to its first performance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderLatency {
    pub time: SimTime,
    pub speaker: Role,
    pub addressee: Option<Role>,
    pub action: ActionPattern,
    pub latency_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTimes {
    /// State onset to first matching action, per episode and required action.
    pub state_onset: Vec<CoverageCell>,
    /// Directive to first matching action at or after it.
    pub order_to_action: Vec<OrderLatency>,
}

pub fn response_times(log: &SessionLog, scenario: &ScenarioDef) -> ResponseTimes {
    let performed: Vec<(SimTime, &ActionKind)> =
        log.events.iter().filter_map(|e| e.performed_action().map(|a| (e.time, a))).collect();
    let order_to_action = utterances(log)
        .into_iter()
        .filter(|u| u.tags.contains(&UtteranceTag::Directive))
        .filter_map(|u| {
            let action = u.orders_action.clone()?;
            let latency_ms =
                performed.iter().find(|(t, a)| *t >= u.time && action.matches(a)).map(|(t, _)| t.since(u.time));
            Some(OrderLatency { time: u.time, speaker: u.speaker, addressee: u.addressee, action, latency_ms })
        })
        .collect();
    ResponseTimes { state_onset: coverage(log, scenario), order_to_action }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopWindows {
    pub ack_ms: u64,
    pub report_ms: u64,
}

impl Default for LoopWindows {
    fn default() -> Self {
        LoopWindows { ack_ms: DEFAULT_ACK_WINDOW_MS, report_ms: DEFAULT_REPORT_WINDOW_MS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoop {
    pub directive: Utterance,
    pub ack: Utterance,
    pub report: Option<Utterance>,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopSummary {
    pub loops: Vec<ClosedLoop>,
    pub directives: usize,
    pub closed: usize,
    /// closed / directives; 1.0 when there are no directives.
    pub rate: f64,
    pub vacuous: bool,
    pub windows: LoopWindows,
}

/// Matches directive → acknowledgement → report chains.
///
/// Directives are processed earliest first. The acknowledgement is the
/// earliest unused one from the addressee (any other speaker when there is
/// none) in `(d, d + ack_ms]`; the report is the earliest unused one from
/// the acknowledging speaker in `(ack, d + report_ms]`.
pub fn detect_closed_loops(utts: &[Utterance], windows: LoopWindows) -> Result<ClosedLoopSummary, AnalyticsError> {
    if let Some(i) = utts.windows(2).position(|w| w[1].time < w[0].time) {
        return Err(AnalyticsError::Domain(format!("utterances out of time order at index {}", i + 1)));
    }
    let mut ack_used = vec![false; utts.len()];
    let mut report_used = vec![false; utts.len()];
    let mut loops = Vec::new();
    let mut directives = 0;
    for d in utts.iter().filter(|u| u.tags.contains(&UtteranceTag::Directive)) {
        directives += 1;
        let responder_ok = |u: &Utterance| match d.addressee {
            Some(b) => u.speaker == b,
            None => u.speaker != d.speaker,
        };
        let ack_deadline = d.time + windows.ack_ms;
        let Some(ai) = utts.iter().enumerate().position(|(j, u)| {
            !ack_used[j]
                && u.tags.contains(&UtteranceTag::Acknowledgement)
                && responder_ok(u)
                && u.time > d.time
                && u.time <= ack_deadline
        }) else {
            continue;
        };
        ack_used[ai] = true;
        let ack = &utts[ai];
        let report_deadline = d.time + windows.report_ms;
        let ri = utts.iter().enumerate().position(|(k, u)| {
            !report_used[k]
                && u.tags.contains(&UtteranceTag::Report)
                && u.speaker == ack.speaker
                && u.time > ack.time
                && u.time <= report_deadline
        });
        if let Some(k) = ri {
            report_used[k] = true;
        }
        loops.push(ClosedLoop { directive: d.clone(), ack: ack.clone(), report: ri.map(|k| utts[k].clone()), closed: ri.is_some() });
    }
    let closed = loops.iter().filter(|l| l.closed).count();
    let vacuous = directives == 0;
    let rate = if vacuous { 1.0 } else { closed as f64 / directives as f64 };
    Ok(ClosedLoopSummary { loops, directives, closed, rate, vacuous, windows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum ErrorEntry {
    Alert { time: SimTime, rule_id: String, category: AlertCategory, severity: Severity, message: String },
    Rejected { time: SimTime, role: Role, action: ActionKind, reason: RejectReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarkerKind {
    Transition,
    Alert,
    Directive,
    MissedDeadline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineMarker {
    pub time: SimTime,
    pub kind: MarkerKind,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrmReport {
    pub schema_version: u32,
    pub scenario_id: String,
    pub seed: u64,
    pub duration_ms: u64,
    pub comm_frequency: CommFrequency,
    /// Absent when no action was performed.
    pub task_distribution: Option<TaskDistribution>,
    pub response_times: ResponseTimes,
    pub closed_loop: ClosedLoopSummary,
    pub coverage: Vec<CoverageCell>,
    pub learning_points: Vec<LearningPoint>,
    pub error_summary: Vec<ErrorEntry>,
    pub timeline_markers: Vec<TimelineMarker>,
}

/// Learning points for missed or late linked actions, plus every unlinked
/// point of a visited state. Scenario order is kept.
pub fn select_learning_points(scenario: &ScenarioDef, eps: &[Episode], cells: &[CoverageCell]) -> Vec<LearningPoint> {
    scenario
        .learning_points
        .iter()
        .filter(|lp| match &lp.linked_action {
            Some(action) => cells
                .iter()
                .any(|c| c.rhythm == lp.state && c.action == *action && c.status != CellStatus::Done),
            None => eps.iter().any(|e| e.rhythm == lp.state),
        })
        .cloned()
        .collect()
}

pub fn build_report(log: &SessionLog, scenario: &ScenarioDef, windows: LoopWindows) -> Result<CrmReport, AnalyticsError> {
    if log.session_end().is_none() {
        return Err(AnalyticsError::IncompleteLog("no SessionEnd record".into()));
    }
    let (start, end) = session_span(log);
    let eps = episodes(log);
    let response_times = response_times(log, scenario);
    let cells = response_times.state_onset.clone();
    let closed_loop = detect_closed_loops(&utterances(log), windows)?;

    let mut error_summary = Vec::new();
    let mut markers = Vec::new();
    for e in &log.events {
        match &e.payload {
            Payload::AlertEmitted(a) => {
                error_summary.push(ErrorEntry::Alert {
                    time: e.time,
                    rule_id: a.rule_id.clone(),
                    category: a.category,
                    severity: a.severity,
                    message: a.message.clone(),
                });
                markers.push(TimelineMarker { time: e.time, kind: MarkerKind::Alert, label: a.message.clone() });
            }
            Payload::ActionRejected(r) => error_summary.push(ErrorEntry::Rejected {
                time: e.time,
                role: e.actor.role().unwrap_or(Role::Spectator),
                action: r.action.clone(),
                reason: r.reason,
            }),
            Payload::StateTransition(t) => markers.push(TimelineMarker {
                time: e.time,
                kind: MarkerKind::Transition,
                label: format!("{} -> {} ({})", t.from, t.to, t.cause),
            }),
            Payload::Utterance(u) if u.tags.contains(&UtteranceTag::Directive) => {
                markers.push(TimelineMarker { time: e.time, kind: MarkerKind::Directive, label: u.text.clone() })
            }
            _ => {}
        }
    }
    for c in &cells {
        let ep = &eps[c.episode];
        let deadline = match (c.status, c.window_ms) {
            (CellStatus::Done, _) => continue,
            (_, Some(w)) => (c.onset + w).min(ep.end),
            (_, None) => ep.end,
        };
        let late = if c.status == CellStatus::DoneLate { " (late)" } else { "" };
        markers.push(TimelineMarker {
            time: deadline,
            kind: MarkerKind::MissedDeadline,
            label: format!("{} in {} episode {}{late}", c.action, c.rhythm, c.episode),
        });
    }
    markers.sort_by_key(|m| m.time);

    Ok(CrmReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario_id: scenario.id.clone(),
        seed: log.header.seed,
        duration_ms: end.since(start),
        comm_frequency: comm_frequency(log, None)?,
        task_distribution: task_distribution(log).ok(),
        learning_points: select_learning_points(scenario, &eps, &cells),
        coverage: cells,
        response_times,
        closed_loop,
        error_summary,
        timeline_markers: markers,
    })
}

impl CrmReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text debriefing summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Scenario {} (seed {}), {}", self.scenario_id, self.seed, SimTime(self.duration_ms));
        let _ = writeln!(s, "\nCommunication (utterances/min): team {:.2}", self.comm_frequency.team);
        for (role, rate) in &self.comm_frequency.per_role {
            let _ = writeln!(s, "  {role:<12} {rate:.2}");
        }
        match &self.task_distribution {
            Some(td) => {
                let _ = writeln!(s, "\nTask distribution ({} actions, balance {:.3})", td.total, td.balance);
                for (role, share) in &td.shares {
                    let _ = writeln!(s, "  {role:<12} {:>3} ({:.1}%)", td.counts[role], share * 100.0);
                }
            }
            None => {
                let _ = writeln!(s, "\nTask distribution: no actions performed");
            }
        }
        let cl = &self.closed_loop;
        let vac = if cl.vacuous { " (no directives)" } else { "" };
        let _ = writeln!(s, "\nClosed-loop communication: {}/{} closed, rate {:.2}{vac}", cl.closed, cl.directives, cl.rate);
        let _ = writeln!(s, "\nRequired actions:");
        for c in &self.coverage {
            let latency = c.latency_ms.map_or("-".to_string(), |l| format!("{:.1} s", l as f64 / 1000.0));
            let _ = writeln!(s, "  [{}] {:<9} {} #{}: {}  {latency}", status_mark(c.status), format!("{:?}", c.status), c.rhythm, c.episode, c.action);
        }
        if !self.response_times.order_to_action.is_empty() {
            let _ = writeln!(s, "\nOrder to action:");
            for o in &self.response_times.order_to_action {
                let latency = o.latency_ms.map_or("never".to_string(), |l| format!("{:.1} s", l as f64 / 1000.0));
                let _ = writeln!(s, "  {} {} ordered {}: {latency}", o.time, o.speaker, o.action);
            }
        }
        let _ = writeln!(s, "\nErrors ({}):", self.error_summary.len());
        for e in &self.error_summary {
            let _ = match e {
                ErrorEntry::Alert { time, severity, message, .. } => writeln!(s, "  {time} {severity}: {message}"),
                ErrorEntry::Rejected { time, role, action, reason } => writeln!(s, "  {time} {role} {action} rejected: {reason}"),
            };
        }
        if !self.learning_points.is_empty() {
            let _ = writeln!(s, "\nLearning points:");
            for lp in &self.learning_points {
                let _ = writeln!(s, "  - [{}] {}", lp.state, lp.text);
            }
        }
        s
    }
}

fn status_mark(status: CellStatus) -> char {
    match status {
        CellStatus::Done => '+',
        CellStatus::DoneLate => '~',
        CellStatus::Missed => ' ',
    }
}
