use codeteam_core::model::{Event, Origin, Payload, Rhythm, ScriptedEffect};

/// Changes one value of an Internal event so its encoding differs.
/// Returns false for events that are not Internal.
pub fn tamper(e: &mut Event, salt: usize) -> bool {
    if e.origin != Origin::Internal {
        return false;
    }
    let other = |r: Rhythm| {
        let all = Rhythm::ALL;
        let i = all.iter().position(|x| *x == r).unwrap();
        all[(i + 1 + salt % (all.len() - 1)) % all.len()]
    };
    match &mut e.payload {
        Payload::VitalsSample(v) => {
            let v = &mut v.vitals;
            let fields = [
                &mut v.heart_rate,
                &mut v.spo2,
                &mut v.etco2,
                &mut v.bp_sys,
                &mut v.bp_dia,
                &mut v.resp_rate,
            ];
            let n = fields.len();
            for (i, f) in fields.into_iter().enumerate() {
                if i == salt % n {
                    *f += 0.25;
                }
            }
        }
        Payload::StateTransition(t) => t.to = other(t.to),
        Payload::AlertEmitted(a) => a.message.push('!'),
        Payload::ScriptedEvent(s) => match &mut s.effect {
            ScriptedEffect::ForceRhythm { rhythm } => *rhythm = other(*rhythm),
            ScriptedEffect::VitalsOverride { vitals } => {
                vitals.heart_rate = Some(vitals.heart_rate.unwrap_or(0.0) + 1.0)
            }
            ScriptedEffect::NarrativeCue { text } => text.push('!'),
        },
        Payload::SessionStart(s) => s.seed ^= 1 << (salt % 64),
        other => panic!("unexpected Internal payload {other:?}"),
    }
    true
}
