//! Real-time clinical-error rules with modulation.
//!
//! Rules turn the events of one tick into candidate alerts. The modulator
//! then rate-limits per category and caps how many non-critical alerts go
//! out at once, so trainees only see what matters at that moment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{
    ActionKind, AlertCategory, AlertEmitted, AlertTarget, Event, Payload, Rhythm, Role, Severity, SimTime, Vitals,
};
use crate::physiology::PatientState;
use crate::scenario::DrugRule;

/// Predicate a rule applies. Each variant is a built-in check with its
/// parameters, so rule sets can be authored as data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum RuleCheck {
    /// A drug given while the current rhythm is not in its indications,
    /// or a drug missing from the formulary.
    DrugNotIndicated,
    /// The same drug given again before its minimum repeat interval.
    DrugRepeatTooSoon,
    /// Dose differs from the formulary dose by more than `tolerance_mg`.
    DrugWrongDose { tolerance_mg: f64 },
    /// Compressions running at a rate outside `[min, max]`.
    CompressionRateOutOfBand { min: f64, max: f64 },
    /// No compressions for longer than `max_pause_ms` during an arrest rhythm.
    CompressionInterrupted { max_pause_ms: u64 },
    /// A shock delivered while the rhythm was not shockable.
    ShockNonShockable,
    /// A shock with no ClearPatient in the preceding `window_ms`.
    ShockWithoutClear { window_ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRule {
    pub id: String,
    pub category: AlertCategory,
    pub check: RuleCheck,
    /// Alert text; `{drug}` is replaced with the drug name for medication rules.
    pub message: String,
    pub severity: Severity,
    pub target: AlertTarget,
}

pub const DEFAULT_COOLDOWN_MS: u64 = 10_000;
pub const DEFAULT_MAX_CONCURRENT: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModulatorConfig {
    pub cooldown_ms: BTreeMap<AlertCategory, u64>,
    pub max_concurrent: usize,
}

impl Default for ModulatorConfig {
    fn default() -> Self {
        ModulatorConfig {
            cooldown_ms: AlertCategory::ALL.iter().map(|c| (*c, DEFAULT_COOLDOWN_MS)).collect(),
            max_concurrent: DEFAULT_MAX_CONCURRENT,
        }
    }
}

impl ModulatorConfig {
    /// No cooldown and no cap: every candidate passes.
    pub fn unlimited() -> Self {
        ModulatorConfig {
            cooldown_ms: AlertCategory::ALL.iter().map(|c| (*c, 0)).collect(),
            max_concurrent: usize::MAX,
        }
    }

    pub fn cooldown(&self, category: AlertCategory) -> u64 {
        self.cooldown_ms.get(&category).copied().unwrap_or(DEFAULT_COOLDOWN_MS)
    }
}

/// Rule set and modulator settings, as authored in a scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackConfig {
    pub rules: Vec<FeedbackRule>,
    pub modulator: ModulatorConfig,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig { rules: builtin_rules(), modulator: ModulatorConfig::default() }
    }
}

pub fn builtin_rules() -> Vec<FeedbackRule> {
    fn rule(id: &str, category: AlertCategory, check: RuleCheck, severity: Severity, target: AlertTarget, message: &str) -> FeedbackRule {
        FeedbackRule { id: id.into(), category, check, message: message.into(), severity, target }
    }
    use AlertCategory::*;
    let meds = AlertTarget::Role(Role::DefibMeds);
    let compressor = AlertTarget::Role(Role::Compressor);
    vec![
        rule("medication.not-indicated", Medication, RuleCheck::DrugNotIndicated, Severity::Critical, meds,
            "{drug} is not indicated for the current rhythm"),
        rule("medication.repeat-too-soon", Medication, RuleCheck::DrugRepeatTooSoon, Severity::Critical, meds,
            "{drug} repeated too soon"),
        rule("medication.wrong-dose", Medication, RuleCheck::DrugWrongDose { tolerance_mg: 1e-6 }, Severity::Warning, meds,
            "{drug} dose differs from the formulary dose"),
        rule("cpr.rate-out-of-band", Cpr, RuleCheck::CompressionRateOutOfBand { min: 100.0, max: 120.0 },
            Severity::Warning, compressor, "Compression rate outside 100-120/min"),
        rule("cpr.interrupted", Cpr, RuleCheck::CompressionInterrupted { max_pause_ms: 10_000 }, Severity::Warning,
            AlertTarget::Team, "Compressions paused for more than 10 s during arrest"),
        rule("defib.non-shockable", Defibrillation, RuleCheck::ShockNonShockable, Severity::Critical, meds,
            "Shock delivered on a non-shockable rhythm"),
        rule("defib.no-clear", Protocol, RuleCheck::ShockWithoutClear { window_ms: 5_000 }, Severity::Warning, meds,
            "Shock delivered without clearing the patient"),
    ]
}

/// Longest look-back any built-in rule needs, in milliseconds.
pub const LOOKBACK_MS: u64 = 30_000;

/// Everything a rule may look at.
#[derive(Debug, Clone, Copy)]
pub struct FeedbackContext<'a> {
    pub patient: &'a PatientState,
    pub vitals: &'a Vitals,
    /// Events since the previous evaluation, in log order. Utterance and
    /// telemetry records may be present; no rule reads them.
    pub new_events: &'a [Event],
    /// Earlier events inside the look-back window, in log order.
    pub history: &'a [Event],
    pub formulary: &'a [DrugRule],
    pub now: SimTime,
}

impl FeedbackContext<'_> {
    /// Rhythm in effect when `new_events[index]` happened.
    fn rhythm_at(&self, index: usize) -> Rhythm {
        self.new_events[index + 1..]
            .iter()
            .find_map(|e| e.transition().map(|t| t.from))
            .unwrap_or(self.patient.rhythm)
    }

    fn performed(&self) -> impl Iterator<Item = (usize, &Event, &ActionKind)> {
        self.new_events.iter().enumerate().filter_map(|(i, e)| e.performed_action().map(|a| (i, e, a)))
    }

    fn drug_rule(&self, drug: &str) -> Option<&DrugRule> {
        self.formulary.iter().find(|r| r.drug == drug)
    }

    /// Time of the dose of `drug` preceding `new_events[index]`.
    fn previous_dose(&self, index: usize, drug: &str) -> Option<SimTime> {
        let at = self.new_events[index].time;
        let same_tick_earlier = self.new_events[..index]
            .iter()
            .rev()
            .filter_map(|e| e.performed_action().and_then(|a| a.drug()).map(|d| (e.time, d)))
            .find(|(_, d)| *d == drug)
            .map(|(t, _)| t);
        same_tick_earlier.or_else(|| {
            self.patient.drug_history.iter().rev().find(|d| d.drug == drug && d.time < at).map(|d| d.time)
        })
    }
}

fn fires(rule: &FeedbackRule, ctx: &FeedbackContext<'_>) -> Option<String> {
    let drug_msg = |drug: &str| rule.message.replace("{drug}", drug);
    match &rule.check {
        RuleCheck::DrugNotIndicated => ctx.performed().find_map(|(i, _, a)| {
            let drug = a.drug()?;
            let indicated = ctx.drug_rule(drug).is_some_and(|r| r.indicated_rhythms.contains(&ctx.rhythm_at(i)));
            (!indicated).then(|| drug_msg(drug))
        }),
        RuleCheck::DrugRepeatTooSoon => ctx.performed().find_map(|(i, e, a)| {
            let drug = a.drug()?;
            let interval = ctx.drug_rule(drug)?.min_repeat_interval_ms;
            let prev = ctx.previous_dose(i, drug)?;
            (e.time.since(prev) < interval).then(|| drug_msg(drug))
        }),
        RuleCheck::DrugWrongDose { tolerance_mg } => ctx.performed().find_map(|(_, _, a)| match a {
            ActionKind::AdministerDrug { drug, dose_mg } => {
                let rule_dose = ctx.drug_rule(drug)?.dose_mg;
                ((dose_mg - rule_dose).abs() > *tolerance_mg).then(|| drug_msg(drug))
            }
            _ => None,
        }),
        RuleCheck::CompressionRateOutOfBand { min, max } => {
            let p = ctx.patient;
            (p.compressions_active && !(*min..=*max).contains(&p.compression_rate)).then(|| rule.message.clone())
        }
        RuleCheck::CompressionInterrupted { max_pause_ms } => {
            let p = ctx.patient;
            if !p.rhythm.is_arrest() || p.compressions_active {
                return None;
            }
            let onset = SimTime(ctx.now.millis().saturating_sub(p.time_in_state.millis()));
            let pause_start = p.compressions_stopped_at().unwrap_or(SimTime::ZERO).max(onset);
            (ctx.now.since(pause_start) > *max_pause_ms).then(|| rule.message.clone())
        }
        RuleCheck::ShockNonShockable => ctx
            .performed()
            .find(|(i, _, a)| **a == ActionKind::DeliverShock && !ctx.rhythm_at(*i).is_shockable())
            .map(|_| rule.message.clone()),
        RuleCheck::ShockWithoutClear { window_ms } => ctx
            .performed()
            .find(|(i, e, a)| {
                **a == ActionKind::DeliverShock && {
                    let from = SimTime(e.time.millis().saturating_sub(*window_ms));
                    let cleared = ctx
                        .history
                        .iter()
                        .chain(&ctx.new_events[..*i])
                        .any(|c| c.performed_action() == Some(&ActionKind::ClearPatient) && c.time >= from);
                    !cleared
                }
            })
            .map(|_| rule.message.clone()),
    }
}

/// Candidate alerts for one evaluation, sorted by severity (highest first)
/// then rule id. Each rule contributes at most one candidate.
pub fn evaluate(rules: &[FeedbackRule], ctx: &FeedbackContext<'_>) -> Vec<AlertEmitted> {
    let mut out: Vec<AlertEmitted> = rules
        .iter()
        .filter_map(|rule| {
            fires(rule, ctx).map(|message| AlertEmitted {
                rule_id: rule.id.clone(),
                category: rule.category,
                severity: rule.severity,
                message,
                target: rule.target,
            })
        })
        .collect();
    sort_candidates(&mut out);
    out
}

pub fn sort_candidates(candidates: &mut [AlertEmitted]) {
    candidates.sort_by(|a, b| b.severity.cmp(&a.severity).then_with(|| a.rule_id.cmp(&b.rule_id)));
}

/// Rate limiter state: the last emission time per category.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Modulator {
    pub config: ModulatorConfig,
    pub history: BTreeMap<AlertCategory, SimTime>,
}

impl Modulator {
    pub fn new(config: ModulatorConfig) -> Self {
        Modulator { config, history: BTreeMap::new() }
    }
}

/// Filters sorted candidates.
///
/// A candidate is dropped when its category emitted within the cooldown
/// before this call. Non-critical candidates are capped at
/// `max_concurrent` emissions per call; critical ones bypass the cap but
/// still count toward it.
pub fn modulate(candidates: &[AlertEmitted], modulator: &Modulator, now: SimTime) -> (Vec<AlertEmitted>, Modulator) {
    let cfg = &modulator.config;
    let mut emitted: Vec<AlertEmitted> = Vec::new();
    for c in candidates {
        let cooling = modulator.history.get(&c.category).is_some_and(|last| now.since(*last) < cfg.cooldown(c.category));
        if cooling {
            continue;
        }
        if c.severity != Severity::Critical && emitted.len() >= cfg.max_concurrent {
            continue;
        }
        emitted.push(c.clone());
    }
    let mut next = modulator.clone();
    for e in &emitted {
        next.history.insert(e.category, now);
    }
    (emitted, next)
}

/// Convenience for callers holding events: alerts carried by `AlertEmitted` payloads.
pub fn emitted_alerts(events: &[Event]) -> impl Iterator<Item = (&Event, &AlertEmitted)> {
    events.iter().filter_map(|e| match &e.payload {
        Payload::AlertEmitted(a) => Some((e, a)),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActionPerformed, Actor, Origin, StateTransition, TransitionCause};
    use crate::physiology::{rhythm_profile, DrugDose};
    use crate::scenario::default_formulary;

    fn performed(time: u64, role: Role, action: ActionKind) -> Event {
        Event {
            seq: 0,
            time: SimTime(time),
            actor: Actor::Role(role),
            origin: Origin::External,
            payload: Payload::ActionPerformed(ActionPerformed { action }),
        }
    }

    fn epi(time: u64) -> Event {
        performed(time, Role::DefibMeds, ActionKind::AdministerDrug { drug: "epinephrine".into(), dose_mg: 1.0 })
    }

    fn candidate(rule_id: &str, category: AlertCategory, severity: Severity) -> AlertEmitted {
        AlertEmitted { rule_id: rule_id.into(), category, severity, message: rule_id.into(), target: AlertTarget::Team }
    }

    fn ctx<'a>(p: &'a PatientState, v: &'a Vitals, new: &'a [Event], hist: &'a [Event], f: &'a [DrugRule], now: u64) -> FeedbackContext<'a> {
        FeedbackContext { patient: p, vitals: v, new_events: new, history: hist, formulary: f, now: SimTime(now) }
    }

    #[test]
    fn epinephrine_repeated_within_interval() {
        // Doses 60 s apart against a 180 s minimum: 60 000 < 180 000 fires.
        let mut p = PatientState::initial(Rhythm::Asystole);
        p.start_compressions(SimTime(0));
        p.drug_history = vec![
            DrugDose { drug: "epinephrine".into(), dose_mg: 1.0, time: SimTime(10_000) },
            DrugDose { drug: "epinephrine".into(), dose_mg: 1.0, time: SimTime(70_000) },
        ];
        let v = rhythm_profile(p.rhythm);
        let f = default_formulary();
        let new = [epi(70_000)];
        let got = evaluate(&builtin_rules(), &ctx(&p, &v, &new, &[], &f, 70_100));
        assert_eq!(got.len(), 1, "{got:?}");
        assert_eq!(got[0].rule_id, "medication.repeat-too-soon");
        assert_eq!(got[0].message, "epinephrine repeated too soon");
        assert_eq!(got[0].category, AlertCategory::Medication);

        // 190 s apart is fine.
        p.drug_history[1].time = SimTime(200_000);
        let new = [epi(200_000)];
        assert!(evaluate(&builtin_rules(), &ctx(&p, &v, &new, &[], &f, 200_100)).is_empty());
    }

    #[test]
    fn compression_rate_ninety_warns() {
        let mut p = PatientState::initial(Rhythm::VentricularFibrillation);
        p.start_compressions(SimTime(0));
        p.compression_rate = 90.0;
        let v = rhythm_profile(p.rhythm);
        let got = evaluate(&builtin_rules(), &ctx(&p, &v, &[], &[], &[], 1000));
        assert_eq!(got.len(), 1);
        assert_eq!((got[0].category, got[0].severity), (AlertCategory::Cpr, Severity::Warning));
    }

    #[test]
    fn stable_rosc_is_quiet() {
        let p = PatientState::initial(Rhythm::SinusROSC);
        let v = rhythm_profile(p.rhythm);
        let f = default_formulary();
        assert!(evaluate(&builtin_rules(), &ctx(&p, &v, &[], &[], &f, 50_000)).is_empty());
    }

    #[test]
    fn interruption_measured_from_last_stop_or_onset() {
        let mut p = PatientState::initial(Rhythm::VentricularFibrillation);
        let v = rhythm_profile(p.rhythm);
        p.time_in_state = SimTime(10_000);
        assert!(evaluate(&builtin_rules(), &ctx(&p, &v, &[], &[], &[], 10_000)).is_empty());
        p.time_in_state = SimTime(10_100);
        let got = evaluate(&builtin_rules(), &ctx(&p, &v, &[], &[], &[], 10_100));
        assert_eq!(got[0].rule_id, "cpr.interrupted");

        p.start_compressions(SimTime(20_000));
        p.stop_compressions(SimTime(30_000));
        p.time_in_state = SimTime(39_000);
        assert!(evaluate(&builtin_rules(), &ctx(&p, &v, &[], &[], &[], 39_000)).is_empty());
        p.time_in_state = SimTime(40_100);
        assert_eq!(evaluate(&builtin_rules(), &ctx(&p, &v, &[], &[], &[], 40_100)).len(), 1);
    }

    #[test]
    fn shock_rules_use_rhythm_before_the_shock() {
        let mut p = PatientState::initial(Rhythm::SinusROSC);
        p.ventilating = true;
        let v = rhythm_profile(p.rhythm);
        let clear = performed(9_000, Role::DefibMeds, ActionKind::ClearPatient);
        let shock = performed(10_000, Role::DefibMeds, ActionKind::DeliverShock);
        let conversion = Event {
            seq: 0,
            time: SimTime(10_000),
            actor: Actor::System,
            origin: Origin::Internal,
            payload: Payload::StateTransition(StateTransition {
                from: Rhythm::VentricularFibrillation,
                to: Rhythm::SinusROSC,
                cause: TransitionCause::Shock,
            }),
        };
        // Successful shock on VF after clearing: silent.
        let new = [shock.clone(), conversion];
        assert!(evaluate(&builtin_rules(), &ctx(&p, &v, &new, std::slice::from_ref(&clear), &[], 10_100)).is_empty());

        // Shock on asystole without a recent clear: both rules fire, critical first.
        let p = PatientState::initial(Rhythm::Asystole);
        let mut p = p;
        p.start_compressions(SimTime(0));
        let stale_clear = performed(4_000, Role::DefibMeds, ActionKind::ClearPatient);
        let new = [shock];
        let got = evaluate(&builtin_rules(), &ctx(&p, &v, &new, &[stale_clear], &[], 10_100));
        let ids: Vec<_> = got.iter().map(|a| a.rule_id.as_str()).collect();
        assert_eq!(ids, ["defib.non-shockable", "defib.no-clear"]);
    }

    #[test]
    fn not_indicated_and_wrong_dose() {
        let mut p = PatientState::initial(Rhythm::Asystole);
        p.start_compressions(SimTime(0));
        let v = rhythm_profile(p.rhythm);
        let f = default_formulary();
        let new = [performed(5_000, Role::DefibMeds, ActionKind::AdministerDrug { drug: "amiodarone".into(), dose_mg: 150.0 })];
        let got = evaluate(&builtin_rules(), &ctx(&p, &v, &new, &[], &f, 5_100));
        let ids: Vec<_> = got.iter().map(|a| a.rule_id.as_str()).collect();
        assert_eq!(ids, ["medication.not-indicated", "medication.wrong-dose"]);

        let new = [performed(5_000, Role::DefibMeds, ActionKind::AdministerDrug { drug: "vasopressin".into(), dose_mg: 40.0 })];
        let got = evaluate(&builtin_rules(), &ctx(&p, &v, &new, &[], &f, 5_100));
        assert_eq!(got[0].message, "vasopressin is not indicated for the current rhythm");
    }

    #[test]
    fn two_same_category_candidates_fresh_history() {
        let m = Modulator::new(ModulatorConfig::default());
        let cands = [candidate("cpr.a", AlertCategory::Cpr, Severity::Warning), candidate("cpr.b", AlertCategory::Cpr, Severity::Warning)];
        let (out, next) = modulate(&cands, &m, SimTime(0));
        assert_eq!(out.len(), 2);
        assert_eq!(next.history[&AlertCategory::Cpr], SimTime(0));
    }

    #[test]
    fn repeated_alert_every_tick_for_five_seconds_emits_once() {
        let mut m = Modulator::new(ModulatorConfig::default());
        let cand = [candidate("cpr.rate", AlertCategory::Cpr, Severity::Warning)];
        let mut count = 0;
        for tick in 1..=50 {
            let (out, next) = modulate(&cand, &m, SimTime(tick * 100));
            count += out.len();
            m = next;
        }
        assert_eq!(count, 1);
    }

    #[test]
    fn critical_bypasses_cap() {
        let m = Modulator::new(ModulatorConfig::default());
        let mut cands = vec![
            candidate("w.one", AlertCategory::Cpr, Severity::Warning),
            candidate("w.two", AlertCategory::Protocol, Severity::Warning),
            candidate("c.med", AlertCategory::Medication, Severity::Critical),
        ];
        sort_candidates(&mut cands);
        let (out, _) = modulate(&cands, &m, SimTime(0));
        let ids: Vec<_> = out.iter().map(|a| a.rule_id.as_str()).collect();
        assert_eq!(ids, ["c.med", "w.one"]);

        let three_critical: Vec<_> = (0..3).map(|i| candidate(&format!("c{i}"), AlertCategory::ALL[i], Severity::Critical)).collect();
        assert_eq!(modulate(&three_critical, &m, SimTime(0)).0.len(), 3);
    }

    #[test]
    fn critical_respects_cooldown() {
        let mut m = Modulator::new(ModulatorConfig::default());
        m.history.insert(AlertCategory::Medication, SimTime(5_000));
        let cands = [candidate("c.med", AlertCategory::Medication, Severity::Critical)];
        assert!(modulate(&cands, &m, SimTime(14_999)).0.is_empty());
        assert_eq!(modulate(&cands, &m, SimTime(15_000)).0.len(), 1);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = FeedbackConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: FeedbackConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        let partial: FeedbackConfig = serde_json::from_str(r#"{"modulator":{"max_concurrent":3}}"#).unwrap();
        assert_eq!(partial.rules.len(), builtin_rules().len());
        assert_eq!(partial.modulator.max_concurrent, 3);
        assert_eq!(partial.modulator.cooldown(AlertCategory::Cpr), DEFAULT_COOLDOWN_MS);
    }
}
