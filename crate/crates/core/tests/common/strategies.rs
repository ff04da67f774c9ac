use std::collections::{BTreeMap, BTreeSet};

use codeteam_core::logstore::Utterance;
use codeteam_core::model::*;
use proptest::prelude::*;
use proptest::sample::select;

pub fn rhythm() -> impl Strategy<Value = Rhythm> {
    select(Rhythm::ALL.to_vec())
}

pub fn role() -> impl Strategy<Value = Role> {
    select(Role::ALL.to_vec())
}

pub fn trainee() -> impl Strategy<Value = Role> {
    select(Role::TRAINEES.to_vec())
}

/// Any finite float, including zero, subnormals and extreme magnitudes.
pub fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        4 => -1e6..1e6f64,
        1 => prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
        1 => select(vec![0.0, -0.0, 1.0, 0.1, 110.0, 300.0, f64::MAX, f64::MIN_POSITIVE]),
    ]
}

pub fn text() -> impl Strategy<Value = String> {
    prop_oneof!["[ -~]{0,24}", "\\PC{0,12}"]
}

pub fn drug_name() -> impl Strategy<Value = String> {
    select(vec!["epinephrine", "amiodarone", "atropine", "lidocaine"]).prop_map(String::from)
}

/// Actions with parameters drawn from the full finite range.
pub fn action() -> impl Strategy<Value = ActionKind> {
    use ActionKind::*;
    let unit = select(vec![
        CheckResponsiveness,
        CallForHelp,
        CheckPulse,
        CheckRhythm,
        AttachMonitor,
        AttachPads,
        StartCompressions,
        StopCompressions,
        DeliverShock,
        ClearPatient,
        InsertOralAirway,
        BagValveMaskVentilate,
        Intubate,
        ObtainIvAccess,
        Auscultate,
        OrderEkg,
        OrderXray,
        AnnounceRhythm,
    ]);
    prop_oneof![
        6 => unit,
        1 => finite().prop_map(|rate| SetCompressionRate { rate }),
        1 => finite().prop_map(|energy| ChargeDefibrillator { energy }),
        1 => (drug_name(), finite()).prop_map(|(drug, dose_mg)| AdministerDrug { drug, dose_mg }),
        1 => finite().prop_map(|ml| PushFluids { ml }),
    ]
}

/// Actions a trainee might plausibly submit, with clinically shaped parameters.
pub fn clinical_action() -> impl Strategy<Value = ActionKind> {
    use ActionKind::*;
    let unit = select(vec![
        CheckResponsiveness,
        CallForHelp,
        CheckPulse,
        CheckRhythm,
        AttachMonitor,
        AttachPads,
        StartCompressions,
        StopCompressions,
        DeliverShock,
        ClearPatient,
        InsertOralAirway,
        BagValveMaskVentilate,
        Intubate,
        ObtainIvAccess,
        Auscultate,
        OrderEkg,
        OrderXray,
        AnnounceRhythm,
    ]);
    prop_oneof![
        10 => unit,
        2 => select(vec![0.0, 80.0, 90.0, 110.0, 130.0, 170.0]).prop_map(|rate| SetCompressionRate { rate }),
        2 => select(vec![120.0, 150.0, 200.0, 360.0]).prop_map(|energy| ChargeDefibrillator { energy }),
        2 => (drug_name(), select(vec![0.5, 1.0, 150.0, 300.0])).prop_map(|(drug, dose_mg)| AdministerDrug { drug, dose_mg }),
        1 => select(vec![250.0, 500.0, 1000.0]).prop_map(|ml| PushFluids { ml }),
    ]
}

pub fn action_pattern() -> impl Strategy<Value = ActionPattern> {
    prop_oneof![
        select(ActionName::ALL.to_vec()).prop_map(ActionPattern::new),
        drug_name().prop_map(ActionPattern::drug),
    ]
}

/// Vitals satisfying every range invariant.
pub fn vitals() -> impl Strategy<Value = Vitals> {
    (
        0.0..250.0f64,
        0.0..=100.0f64,
        0.0..80.0f64,
        0.0..220.0f64,
        0.0..=1.0f64,
        0.0..40.0f64,
    )
        .prop_map(
            |(heart_rate, spo2, etco2, bp_sys, frac, resp_rate)| Vitals {
                heart_rate,
                spo2,
                etco2,
                bp_sys,
                bp_dia: bp_sys * frac,
                resp_rate,
            },
        )
}

fn opt<T: std::fmt::Debug + Clone>(
    s: impl Strategy<Value = T>,
) -> impl Strategy<Value = Option<T>> {
    prop::option::of(s)
}

pub fn scripted_effect() -> impl Strategy<Value = ScriptedEffect> {
    let patch = (
        opt(finite()),
        opt(finite()),
        opt(finite()),
        opt(finite()),
        opt(finite()),
        opt(finite()),
    )
        .prop_map(
            |(heart_rate, spo2, etco2, bp_sys, bp_dia, resp_rate)| VitalsPatch {
                heart_rate,
                spo2,
                etco2,
                bp_sys,
                bp_dia,
                resp_rate,
            },
        );
    prop_oneof![
        rhythm().prop_map(|rhythm| ScriptedEffect::ForceRhythm { rhythm }),
        patch.prop_map(|vitals| ScriptedEffect::VitalsOverride { vitals }),
        text().prop_map(|text| ScriptedEffect::NarrativeCue { text }),
    ]
}

pub fn payload() -> impl Strategy<Value = Payload> {
    let channel = select(TelemetryChannel::ALL.to_vec());
    let tags = prop::collection::btree_set(select(UtteranceTag::ALL.to_vec()), 0..3);
    let roster = prop::collection::btree_map(trainee(), "[a-z0-9-]{1,8}", 0..4);
    prop_oneof![
        action().prop_map(|action| Payload::ActionPerformed(ActionPerformed { action })),
        (action(), select(RejectReason::ALL.to_vec())).prop_map(|(action, reason)| {
            Payload::ActionRejected(ActionRejected { action, reason })
        }),
        (rhythm(), rhythm(), select(TransitionCause::ALL.to_vec())).prop_map(
            |(from, to, cause)| Payload::StateTransition(StateTransition { from, to, cause })
        ),
        vitals().prop_map(|vitals| Payload::VitalsSample(VitalsSample { vitals })),
        (text(), tags, opt(role()), opt(action_pattern())).prop_map(
            |(text, tags, addressee, orders_action)| {
                Payload::Utterance(UtterancePayload {
                    text,
                    tags,
                    addressee,
                    orders_action,
                })
            }
        ),
        (channel, finite()).prop_map(|(channel, value)| Payload::TelemetrySample(
            TelemetryPayload { channel, value }
        )),
        (
            "[a-z.-]{1,20}",
            select(AlertCategory::ALL.to_vec()),
            select(Severity::ALL.to_vec()),
            text(),
            prop_oneof![Just(AlertTarget::Team), role().prop_map(AlertTarget::Role)],
        )
            .prop_map(|(rule_id, category, severity, message, target)| {
                Payload::AlertEmitted(AlertEmitted {
                    rule_id,
                    category,
                    severity,
                    message,
                    target,
                })
            }),
        scripted_effect().prop_map(|effect| Payload::ScriptedEvent(ScriptedEvent { effect })),
        ("[a-z-]{1,12}", any::<u64>(), rhythm(), roster).prop_map(
            |(scenario_id, seed, initial_rhythm, roster)| {
                Payload::SessionStart(SessionStart {
                    scenario_id,
                    seed,
                    initial_rhythm,
                    roster,
                })
            }
        ),
        select(EndReason::ALL.to_vec())
            .prop_map(|reason| Payload::SessionEnd(SessionEnd { reason })),
    ]
}

pub fn event() -> impl Strategy<Value = Event> {
    (
        any::<u64>(),
        any::<u64>(),
        prop_oneof![Just(Actor::System), role().prop_map(Actor::Role)],
        select(Origin::ALL.to_vec()),
        payload(),
    )
        .prop_map(|(seq, time, actor, origin, payload)| Event {
            seq,
            time: SimTime(time),
            actor,
            origin,
            payload,
        })
}

/// Time-ordered utterance logs on a coarse grid so windows and ties matter.
/// Texts are unique (`u{i}`), which lets oracles refer to utterances by index.
pub fn utterance_log(max_len: usize) -> impl Strategy<Value = Vec<Utterance>> {
    let one = (
        0u64..400,
        trainee(),
        prop::collection::btree_set(select(UtteranceTag::ALL.to_vec()), 0..3),
        opt(trainee()),
    );
    prop::collection::vec(one, 0..=max_len).prop_map(|raw| {
        let mut raw = raw;
        raw.sort_by_key(|r| r.0);
        raw.into_iter()
            .enumerate()
            .map(
                |(i, (slot, speaker, tags, addressee)): (
                    usize,
                    (u64, Role, BTreeSet<UtteranceTag>, Option<Role>),
                )| Utterance {
                    speaker,
                    time: SimTime(slot * 1_000),
                    text: format!("u{i}"),
                    tags,
                    addressee,
                    orders_action: None,
                },
            )
            .collect()
    })
}

/// Per-role counts for task distribution checks.
pub fn role_counts() -> impl Strategy<Value = BTreeMap<Role, u64>> {
    prop::collection::vec(0u64..50, 4).prop_map(|v| Role::TRAINEES.iter().copied().zip(v).collect())
}
