//! Authorable scenario definitions and their validation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::feedback::FeedbackConfig;
use crate::model::{ActionPattern, Rhythm, ScriptedEffect, SimTime, Vitals};
use crate::physiology::{rhythm_profile, PhysioParams, AMIODARONE, EPINEPHRINE};
use crate::session::PermissionMatrix;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedEntry {
    pub time: SimTime,
    pub effect: ScriptedEffect,
}

/// An action expected during every episode of `state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequiredAction {
    pub state: Rhythm,
    pub action: ActionPattern,
    /// Latest acceptable latency from state onset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningPoint {
    pub state: Rhythm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linked_action: Option<ActionPattern>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrugRule {
    pub drug: String,
    pub dose_mg: f64,
    #[serde(default)]
    pub min_repeat_interval_ms: u64,
    pub indicated_rhythms: BTreeSet<Rhythm>,
}

pub fn default_formulary() -> Vec<DrugRule> {
    vec![
        DrugRule {
            drug: EPINEPHRINE.into(),
            dose_mg: 1.0,
            min_repeat_interval_ms: 180_000,
            indicated_rhythms: Rhythm::ALL.iter().copied().filter(|r| r.is_arrest()).collect(),
        },
        DrugRule {
            drug: AMIODARONE.into(),
            dose_mg: 300.0,
            min_repeat_interval_ms: 0,
            indicated_rhythms: Rhythm::ALL.iter().copied().filter(|r| r.is_shockable()).collect(),
        },
    ]
}

fn default_schema_version() -> u32 {
    SCENARIO_SCHEMA_VERSION
}

/// A fully-populated scenario. Omitted document sections take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDef {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub initial_rhythm: Rhythm,
    #[serde(default)]
    pub physio: PhysioParams,
    #[serde(default)]
    pub scripted: Vec<ScriptedEntry>,
    #[serde(default)]
    pub required: Vec<RequiredAction>,
    #[serde(default)]
    pub learning_points: Vec<LearningPoint>,
    #[serde(default = "default_formulary")]
    pub formulary: Vec<DrugRule>,
    #[serde(default)]
    pub feedback: FeedbackConfig,
    #[serde(default)]
    pub permissions: PermissionMatrix,
}

impl ScenarioDef {
    /// Scenario with every optional section at its default.
    pub fn minimal(id: impl Into<String>, initial_rhythm: Rhythm) -> Self {
        ScenarioDef {
            schema_version: SCENARIO_SCHEMA_VERSION,
            id: id.into(),
            title: String::new(),
            initial_rhythm,
            physio: PhysioParams::default(),
            scripted: Vec::new(),
            required: Vec::new(),
            learning_points: Vec::new(),
            formulary: default_formulary(),
            feedback: FeedbackConfig::default(),
            permissions: PermissionMatrix::default(),
        }
    }

    pub fn drug_rule(&self, drug: &str) -> Option<&DrugRule> {
        self.formulary.iter().find(|r| r.drug == drug)
    }

    /// Pretty JSON; loading it back yields an equal definition.
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("scenario parse error at `{path}`: {message}")]
pub struct ParseError {
    pub path: String,
    pub message: String,
}

/// Parses a JSON scenario document.
pub fn load_scenario(doc: &str) -> Result<ScenarioDef, ParseError> {
    let de = &mut serde_json::Deserializer::from_str(doc);
    let s: ScenarioDef = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ParseError { path, message: e.into_inner().to_string() }
    })?;
    if s.schema_version != SCENARIO_SCHEMA_VERSION {
        return Err(ParseError {
            path: "schema_version".into(),
            message: format!("unsupported schema version {} (expected {SCENARIO_SCHEMA_VERSION})", s.schema_version),
        });
    }
    for (i, pair) in s.scripted.windows(2).enumerate() {
        if pair[1].time <= pair[0].time {
            return Err(ParseError {
                path: format!("scripted[{}].time", i + 1),
                message: format!("scripted times must be strictly increasing ({} after {})", pair[1].time.millis(), pair[0].time.millis()),
            });
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IssueSeverity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: IssueSeverity,
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            IssueSeverity::Warning => "warning",
            IssueSeverity::Error => "error",
        };
        write!(f, "{sev}: {}: {}", self.path, self.message)
    }
}

pub fn has_errors(issues: &[Issue]) -> bool {
    issues.iter().any(|i| i.severity == IssueSeverity::Error)
}

/// Rhythm changes the patient model can make on its own under `params`.
pub fn transition_edges(params: &PhysioParams) -> Vec<(Rhythm, Rhythm)> {
    use Rhythm::*;
    let mut edges = Vec::new();
    if params.deterioration_timeout.contains_key(&VentricularFibrillation) {
        edges.push((VentricularFibrillation, Asystole));
    }
    if params.deterioration_timeout.contains_key(&PulselessVTach) {
        edges.push((PulselessVTach, VentricularFibrillation));
    }
    if params.shock_success_base + params.shock_success_cpr_bonus + params.amiodarone_shock_bonus > 0.0 {
        edges.push((VentricularFibrillation, SinusROSC));
        edges.push((PulselessVTach, SinusROSC));
    }
    if params.epi_rosc_rate_per_min > 0.0 {
        edges.push((Asystole, SinusROSC));
        edges.push((PEA, SinusROSC));
    }
    edges.push((SinusROSC, VentricularFibrillation));
    edges
}

/// Rhythms reachable from the initial rhythm or any scripted forced rhythm.
pub fn reachable_rhythms(s: &ScenarioDef) -> BTreeSet<Rhythm> {
    let mut adj: BTreeMap<Rhythm, Vec<Rhythm>> = BTreeMap::new();
    for (a, b) in transition_edges(&s.physio) {
        adj.entry(a).or_default().push(b);
    }
    let mut seen = BTreeSet::from([s.initial_rhythm]);
    for entry in &s.scripted {
        if let ScriptedEffect::ForceRhythm { rhythm } = entry.effect {
            seen.insert(rhythm);
        }
    }
    let mut queue: VecDeque<Rhythm> = seen.iter().copied().collect();
    while let Some(r) = queue.pop_front() {
        for next in adj.get(&r).into_iter().flatten() {
            if seen.insert(*next) {
                queue.push_back(*next);
            }
        }
    }
    seen
}

/// All invariant violations; empty iff the scenario is sound.
pub fn validate_scenario(s: &ScenarioDef) -> Vec<Issue> {
    let mut issues = Vec::new();
    let mut push = |severity, path: String, message: String| issues.push(Issue { severity, path, message });
    use IssueSeverity::{Error, Warning};

    if s.schema_version != SCENARIO_SCHEMA_VERSION {
        push(Error, "schema_version".into(), format!("unsupported schema version {}", s.schema_version));
    }
    if s.id.trim().is_empty() {
        push(Error, "id".into(), "scenario id must not be empty".into());
    }
    for (path, msg) in s.physio.problems() {
        push(Error, format!("physio.{path}"), msg);
    }

    let mut prev = SimTime::ZERO;
    for (i, entry) in s.scripted.iter().enumerate() {
        if entry.time <= prev {
            let what = if i == 0 { "scripted times must be > 0".to_string() } else { "scripted times must be strictly increasing".to_string() };
            push(Error, format!("scripted[{i}].time"), what);
        }
        prev = entry.time;
        match &entry.effect {
            ScriptedEffect::VitalsOverride { vitals } => {
                // Apply over a neutral baseline so partial patches are checked field by field.
                let base = Vitals { bp_sys: 200.0, bp_dia: 0.0, ..rhythm_profile(Rhythm::SinusROSC) };
                let mut patched = vitals.apply(&base);
                if vitals.bp_sys.is_none() || vitals.bp_dia.is_none() {
                    patched.bp_sys = patched.bp_sys.max(patched.bp_dia);
                }
                if let Err(e) = patched.validate() {
                    push(Error, format!("scripted[{i}].effect.vitals"), e.to_string());
                }
            }
            ScriptedEffect::NarrativeCue { text } if text.trim().is_empty() => {
                push(Warning, format!("scripted[{i}].effect.text"), "narrative cue is empty".into());
            }
            _ => {}
        }
    }

    let reachable = reachable_rhythms(s);
    let mut seen_required = BTreeSet::new();
    for (i, req) in s.required.iter().enumerate() {
        if req.window_ms == Some(0) {
            push(Error, format!("required[{i}].window_ms"), "window must be > 0".into());
        }
        if !reachable.contains(&req.state) {
            push(Error, format!("required[{i}].state"), format!("{} is unreachable from {}", req.state, s.initial_rhythm));
        }
        if let Some(drug) = &req.action.drug {
            if s.drug_rule(drug).is_none() {
                push(Warning, format!("required[{i}].action"), format!("drug `{drug}` is not in the formulary"));
            }
        }
        if !seen_required.insert((req.state, req.action.to_string())) {
            push(Warning, format!("required[{i}]"), "duplicate required action".into());
        }
    }

    for (i, lp) in s.learning_points.iter().enumerate() {
        if lp.text.trim().is_empty() {
            push(Error, format!("learning_points[{i}].text"), "learning point text must not be empty".into());
        }
        if !reachable.contains(&lp.state) {
            push(Warning, format!("learning_points[{i}].state"), format!("{} is unreachable", lp.state));
        }
    }

    let mut drugs = BTreeSet::new();
    for (i, rule) in s.formulary.iter().enumerate() {
        if !(rule.dose_mg > 0.0 && rule.dose_mg.is_finite()) {
            push(Error, format!("formulary[{i}].dose_mg"), format!("dose {} must be > 0", rule.dose_mg));
        }
        if !drugs.insert(rule.drug.as_str()) {
            push(Error, format!("formulary[{i}].drug"), format!("duplicate drug `{}`", rule.drug));
        }
        if rule.indicated_rhythms.is_empty() {
            push(Warning, format!("formulary[{i}].indicated_rhythms"), "drug is never indicated".into());
        }
    }

    let mut rule_ids = BTreeSet::new();
    for (i, rule) in s.feedback.rules.iter().enumerate() {
        if !rule_ids.insert(rule.id.as_str()) {
            push(Error, format!("feedback.rules[{i}].id"), format!("duplicate rule id `{}`", rule.id));
        }
    }
    if s.feedback.modulator.max_concurrent == 0 {
        push(Error, "feedback.modulator.max_concurrent".into(), "must be >= 1".into());
    }

    for (role, actions) in &s.permissions.0 {
        if !role.is_trainee() && !actions.is_empty() {
            push(Error, format!("permissions.{role}"), "spectators cannot be granted actions".into());
        }
    }
    issues
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("domain error: {0}")]
pub struct DomainError(pub String);

/// Scripted entries with time in `(t0, t1]`, in order.
pub fn scripted_events_due(s: &ScenarioDef, t0: SimTime, t1: SimTime) -> Result<&[ScriptedEntry], DomainError> {
    if t0 > t1 {
        return Err(DomainError(format!("interval start {} after end {}", t0.millis(), t1.millis())));
    }
    let lo = s.scripted.partition_point(|e| e.time <= t0);
    let hi = s.scripted.partition_point(|e| e.time <= t1);
    Ok(&s.scripted[lo..hi.max(lo)])
}
