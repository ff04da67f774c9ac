//! Scripted bot trainees and headless simulation.
//!
//! A bot script lists timed actions and utterances per role. Simulation
//! runs on logical time as fast as possible and produces the same log
//! bytes for the same scenario, script and seed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::logstore::{LogHeader, SessionLog};
use crate::model::{ActionKind, ActionPattern, EndReason, Role, SimTime, UtteranceTag};
use crate::scenario::ScenarioDef;
use crate::session::{Session, SessionConfig, SessionError};

pub const BOT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BotSay {
    pub text: String,
    #[serde(default)]
    pub tags: BTreeSet<UtteranceTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub addressee: Option<Role>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orders_action: Option<ActionPattern>,
}

/// One timed step: exactly one of `action` or `say`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BotStep {
    pub time: SimTime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub say: Option<BotSay>,
}

impl BotStep {
    pub fn act(time: u64, action: ActionKind) -> Self {
        BotStep { time: SimTime(time), action: Some(action), say: None }
    }

    pub fn say(time: u64, say: BotSay) -> Self {
        BotStep { time: SimTime(time), action: None, say: Some(say) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BotScript {
    #[serde(default = "default_version")]
    pub schema_version: u32,
    /// Simulated session length; the session ends `Completed` at this time.
    pub duration_ms: u64,
    #[serde(default)]
    pub roles: BTreeMap<Role, Vec<BotStep>>,
}

fn default_version() -> u32 {
    BOT_SCHEMA_VERSION
}

#[derive(Debug, thiserror::Error)]
pub enum BotError {
    #[error("bot script parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("bot script invalid at `{path}`: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Session(#[from] SessionError),
}

impl BotScript {
    pub fn parse(doc: &str) -> Result<Self, BotError> {
        let de = &mut serde_json::Deserializer::from_str(doc);
        let script: BotScript = serde_path_to_error::deserialize(de)
            .map_err(|e| BotError::Parse { path: e.path().to_string(), message: e.into_inner().to_string() })?;
        script.validate()?;
        Ok(script)
    }

    pub fn validate(&self) -> Result<(), BotError> {
        let invalid = |path: String, message: &str| Err(BotError::Invalid { path, message: message.into() });
        if self.schema_version != BOT_SCHEMA_VERSION {
            return invalid("schema_version".into(), "unsupported schema version");
        }
        if self.duration_ms == 0 {
            return invalid("duration_ms".into(), "duration must be > 0");
        }
        for (role, steps) in &self.roles {
            if !role.is_trainee() {
                return invalid(format!("roles.{role}"), "only trainee roles can be scripted");
            }
            for (i, step) in steps.iter().enumerate() {
                if step.action.is_some() == step.say.is_some() {
                    return invalid(format!("roles.{role}[{i}]"), "a step needs exactly one of `action` or `say`");
                }
                if i > 0 && step.time < steps[i - 1].time {
                    return invalid(format!("roles.{role}[{i}].time"), "times must be non-decreasing per role");
                }
            }
        }
        Ok(())
    }

    /// All steps ordered by time, then role, then position in the role's list.
    pub fn timeline(&self) -> Vec<(Role, &BotStep)> {
        let mut all: Vec<(Role, &BotStep)> =
            self.roles.iter().flat_map(|(r, steps)| steps.iter().map(move |s| (*r, s))).collect();
        all.sort_by_key(|(r, s)| (s.time, *r));
        all
    }

    /// Copy of the script without the first step matching `pred`.
    pub fn without_first(&self, pred: impl Fn(Role, &BotStep) -> bool) -> Self {
        let mut out = self.clone();
        'outer: for (role, steps) in out.roles.iter_mut() {
            if let Some(i) = steps.iter().position(|s| pred(*role, s)) {
                steps.remove(i);
                break 'outer;
            }
        }
        out
    }
}

/// Client id a bot uses for `role`.
pub fn bot_client(role: Role) -> String {
    format!("bot-{}", role.as_str().to_ascii_lowercase())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    pub tick_ms: u64,
    pub vitals_sample_every_ms: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            tick_ms: crate::session::DEFAULT_TICK_MS,
            vitals_sample_every_ms: crate::session::DEFAULT_SAMPLE_EVERY_MS,
        }
    }
}

/// Runs a complete headless session. Each step executes at the first tick
/// boundary at or after its time, before that boundary's next tick.
pub fn simulate(scenario: &ScenarioDef, bots: &BotScript, seed: u64, opts: SimOptions) -> Result<SessionLog, BotError> {
    bots.validate()?;
    let cfg = SessionConfig {
        scenario: scenario.clone(),
        seed,
        tick_ms: opts.tick_ms,
        vitals_sample_every_ms: opts.vitals_sample_every_ms,
    };
    let mut session = Session::create(cfg)?;
    for role in Role::TRAINEES {
        session.join(&bot_client(role), role)?;
    }
    let header = LogHeader::for_session(&session, None);
    let end = SimTime(bots.duration_ms);
    let timeline = bots.timeline();
    let mut next = 0;
    loop {
        while let Some((role, step)) = timeline.get(next) {
            if step.time > session.clock() || step.time > end {
                break;
            }
            let client = bot_client(*role);
            if let Some(action) = &step.action {
                session.submit_action(&client, action.clone())?;
            }
            if let Some(say) = &step.say {
                session.record_utterance(&client, say.text.clone(), say.tags.clone(), say.addressee, say.orders_action.clone())?;
            }
            next += 1;
        }
        if session.clock() >= end {
            break;
        }
        session.tick()?;
    }
    session.end_session(EndReason::Completed)?;
    Ok(SessionLog { header, events: session.events().to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EventKind, Rhythm};

    fn script(duration_ms: u64, steps: Vec<(Role, BotStep)>) -> BotScript {
        let mut roles: BTreeMap<Role, Vec<BotStep>> = BTreeMap::new();
        for (r, s) in steps {
            roles.entry(r).or_default().push(s);
        }
        BotScript { schema_version: 1, duration_ms, roles }
    }

    #[test]
    fn parse_and_validate() {
        let doc = r#"{"duration_ms":1000,"roles":{"Compressor":[{"time":0,"action":{"kind":"StartCompressions"}},
            {"time":500,"say":{"text":"Compressions on","tags":["Report"]}}]}}"#;
        let s = BotScript::parse(doc).unwrap();
        assert_eq!(s.roles[&Role::Compressor].len(), 2);

        let both = r#"{"duration_ms":1000,"roles":{"Compressor":[{"time":0}]}}"#;
        assert!(matches!(BotScript::parse(both), Err(BotError::Invalid { .. })));
        let backwards = r#"{"duration_ms":1000,"roles":{"Airway":[
            {"time":5,"action":{"kind":"Intubate"}},{"time":4,"action":{"kind":"Intubate"}}]}}"#;
        match BotScript::parse(backwards) {
            Err(BotError::Invalid { path, .. }) => assert_eq!(path, "roles.Airway[1].time"),
            other => panic!("{other:?}"),
        }
        let spectator = r#"{"duration_ms":1000,"roles":{"Spectator":[]}}"#;
        assert!(BotScript::parse(spectator).is_err());
        let bad_kind = r#"{"duration_ms":1000,"roles":{"Airway":[{"time":0,"action":{"kind":"Fly"}}]}}"#;
        match BotScript::parse(bad_kind) {
            Err(BotError::Parse { path, message }) => {
                assert!(path.ends_with("[0].action.kind"), "{path}");
                assert!(message.contains("Fly"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn steps_run_at_their_tick_and_session_completes() {
        let s = script(
            2_000,
            vec![
                (Role::DefibMeds, BotStep::act(0, ActionKind::AttachPads)),
                (Role::Compressor, BotStep::act(250, ActionKind::StartCompressions)),
            ],
        );
        let log = simulate(&ScenarioDef::minimal("b", Rhythm::VentricularFibrillation), &s, 1, SimOptions::default()).unwrap();
        log.validate().unwrap();
        let performed: Vec<_> = log.events.iter().filter(|e| e.kind() == EventKind::ActionPerformed).map(|e| e.time.millis()).collect();
        assert_eq!(performed, [0, 300]);
        let last = log.events.last().unwrap();
        assert_eq!((last.kind(), last.time), (EventKind::SessionEnd, SimTime(2_000)));
    }

    #[test]
    fn same_inputs_same_bytes() {
        let s = script(30_000, vec![(Role::Compressor, BotStep::act(0, ActionKind::StartCompressions))]);
        let sc = ScenarioDef::minimal("b", Rhythm::Asystole);
        let a = simulate(&sc, &s, 5, SimOptions::default()).unwrap().to_text().unwrap();
        let b = simulate(&sc, &s, 5, SimOptions::default()).unwrap().to_text().unwrap();
        assert_eq!(a, b);
    }
}
