//! Randomized bot sessions checked against the patient state-machine
//! invariants after every input and every tick.

use std::collections::{BTreeMap, BTreeSet};

use codeteam_core::bots::{bot_client, simulate, BotScript, BotStep, SimOptions};
use codeteam_core::logstore::SessionLog;
use codeteam_core::model::{
    ActionName, EndReason, Rhythm, Role, ScriptedEffect, SimTime, TransitionCause,
};
use codeteam_core::physiology::PhysioParams;
use codeteam_core::scenario::{ScenarioDef, ScriptedEntry};
use codeteam_core::session::{Phase, Session, SessionConfig};
use proptest::prelude::*;

use super::strategies::{clinical_action, rhythm};

#[derive(Debug, Clone)]
pub struct RandomRun {
    pub scenario: ScenarioDef,
    pub bots: BotScript,
    pub seed: u64,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct RunStats {
    pub ticks: u64,
    pub transitions: u64,
    pub vf_deteriorations: u64,
    pub nonshockable_shocks: u64,
}

impl std::ops::AddAssign for RunStats {
    fn add_assign(&mut self, o: Self) {
        self.ticks += o.ticks;
        self.transitions += o.transitions;
        self.vf_deteriorations += o.vf_deteriorations;
        self.nonshockable_shocks += o.nonshockable_shocks;
    }
}

fn physio() -> impl Strategy<Value = PhysioParams> {
    (
        0.0..=1.0f64,
        0.0..=1.0f64,
        0.0..40.0f64,
        5_000u64..90_000,
        3_000u64..60_000,
        5_000u64..90_000,
        0.0..=1.0f64,
    )
        .prop_map(
            |(base, bonus, epi_rate, vf_ms, pvt_ms, rearrest_ms, cpr_min)| {
                let mut p = PhysioParams {
                    shock_success_base: base,
                    shock_success_cpr_bonus: bonus * (1.0 - base),
                    epi_rosc_rate_per_min: epi_rate,
                    ..PhysioParams::default()
                };
                // Millisecond resolution, so timeouts rarely fall on a tick boundary.
                p.deterioration_timeout
                    .insert(Rhythm::VentricularFibrillation, vf_ms as f64 / 1_000.0);
                p.deterioration_timeout
                    .insert(Rhythm::PulselessVTach, pvt_ms as f64 / 1_000.0);
                p.rosc_rearrest_timeout = rearrest_ms as f64 / 1_000.0;
                p.rosc_cpr_fraction_min = cpr_min;
                p
            },
        )
}

fn scripted(duration: u64) -> impl Strategy<Value = Vec<ScriptedEntry>> {
    prop::collection::btree_map(1..duration, rhythm(), 0..3).prop_map(|m| {
        m.into_iter()
            .map(|(t, rhythm)| ScriptedEntry {
                time: SimTime(t),
                effect: ScriptedEffect::ForceRhythm { rhythm },
            })
            .collect()
    })
}

fn bots(duration: u64) -> impl Strategy<Value = BotScript> {
    let step = (
        0..duration,
        prop::sample::select(Role::TRAINEES.to_vec()),
        clinical_action(),
    );
    prop::collection::vec(step, 0..60).prop_map(move |steps| {
        let mut roles: BTreeMap<Role, Vec<BotStep>> = BTreeMap::new();
        for (t, role, action) in steps {
            roles.entry(role).or_default().push(BotStep::act(t, action));
        }
        for steps in roles.values_mut() {
            steps.sort_by_key(|s| s.time);
        }
        BotScript {
            schema_version: 1,
            duration_ms: duration,
            roles,
        }
    })
}

pub fn random_run() -> impl Strategy<Value = RandomRun> {
    (20_000u64..120_000).prop_flat_map(|duration| {
        (
            rhythm(),
            physio(),
            scripted(duration),
            bots(duration),
            any::<u64>(),
        )
            .prop_map(move |(initial, physio, scripted, bots, seed)| {
                let mut scenario = ScenarioDef::minimal("random", initial);
                scenario.physio = physio;
                scenario.scripted = scripted;
                RandomRun {
                    scenario,
                    bots,
                    seed,
                }
            })
    })
}

/// Untreated VF: bots never shock, so nothing can end VF but deterioration.
pub fn untreated_vf_run() -> impl Strategy<Value = RandomRun> {
    random_run().prop_map(|mut r| {
        r.scenario.initial_rhythm = Rhythm::VentricularFibrillation;
        r.scenario.scripted.clear();
        for steps in r.bots.roles.values_mut() {
            steps.retain(|s| {
                s.action
                    .as_ref()
                    .is_some_and(|a| a.name() != ActionName::DeliverShock)
            });
        }
        let limit = r
            .scenario
            .physio
            .deterioration_ms(Rhythm::VentricularFibrillation)
            .unwrap();
        r.bots.duration_ms = r.bots.duration_ms.max(limit + 2_000);
        r
    })
}

struct Checker {
    last_transition_at: SimTime,
    rhythm_onset: SimTime,
    seen: usize,
    stats: RunStats,
}

impl Checker {
    fn check(&mut self, s: &Session) -> Result<(), String> {
        let clock = s.clock();
        let tick = s.config().tick_ms;
        let params = &s.scenario().physio;
        for e in &s.events()[self.seen..] {
            if e.time != clock {
                return Err(format!(
                    "event {} stamped {} at clock {clock}",
                    e.seq, e.time
                ));
            }
            let Some(t) = e.transition() else { continue };
            self.stats.transitions += 1;
            if t.cause == TransitionCause::Shock && !t.from.is_shockable() {
                return Err(format!(
                    "seq {}: shock converted non-shockable {}",
                    e.seq, t.from
                ));
            }
            if t.to == Rhythm::SinusROSC
                && !t.from.is_shockable()
                && t.cause == TransitionCause::Shock
            {
                return Err(format!("seq {}: shock-caused ROSC from {}", e.seq, t.from));
            }
            if t.cause == TransitionCause::Deterioration
                && t.from == Rhythm::VentricularFibrillation
            {
                self.stats.vf_deteriorations += 1;
                let limit = params
                    .deterioration_ms(Rhythm::VentricularFibrillation)
                    .unwrap();
                let stay = e.time.since(self.rhythm_onset);
                if stay < limit || stay >= limit + tick {
                    return Err(format!(
                        "seq {}: VF deteriorated after {stay} ms, timeout {limit} ms",
                        e.seq
                    ));
                }
            }
            self.last_transition_at = e.time;
            self.rhythm_onset = e.time;
        }
        self.seen = s.events().len();

        let p = s.patient();
        s.vitals()
            .validate()
            .map_err(|err| format!("at {clock}: {err}"))?;
        if !(0.0..=1.0).contains(&p.cpr_fraction) {
            return Err(format!("at {clock}: cpr_fraction {}", p.cpr_fraction));
        }
        let expected_tis = clock.since(self.last_transition_at);
        if p.time_in_state.millis() != expected_tis {
            return Err(format!(
                "at {clock}: time_in_state {} but last transition at {}",
                p.time_in_state, self.last_transition_at
            ));
        }
        if p.rhythm == Rhythm::VentricularFibrillation {
            let limit = params
                .deterioration_ms(Rhythm::VentricularFibrillation)
                .unwrap();
            if clock > SimTime::ZERO && p.time_in_state.millis() >= limit {
                return Err(format!(
                    "at {clock}: still in VF after {} ms",
                    p.time_in_state
                ));
            }
        }
        if s.phase() == Phase::Running {
            let roles: BTreeSet<Role> = s.roster().keys().copied().collect();
            let clients: BTreeSet<&String> = s.roster().values().collect();
            if roles.len() != 4 || clients.len() != 4 || roles.iter().any(|r| !r.is_trainee()) {
                return Err(format!(
                    "at {clock}: roster invariant broken: {:?}",
                    s.roster()
                ));
            }
        }
        Ok(())
    }
}

/// Drives the run tick by tick, checking invariants after every input and
/// tick, and confirms the log equals the headless simulator's.
pub fn check_run(run: &RandomRun) -> Result<RunStats, String> {
    let opts = SimOptions::default();
    let cfg = SessionConfig {
        scenario: run.scenario.clone(),
        seed: run.seed,
        tick_ms: opts.tick_ms,
        vitals_sample_every_ms: opts.vitals_sample_every_ms,
    };
    let mut s = Session::create(cfg).map_err(|e| e.to_string())?;
    for role in Role::TRAINEES {
        s.join(&bot_client(role), role).map_err(|e| e.to_string())?;
    }
    let mut ck = Checker {
        last_transition_at: SimTime::ZERO,
        rhythm_onset: SimTime::ZERO,
        seen: 0,
        stats: RunStats::default(),
    };
    ck.check(&s)?;
    let end = SimTime(run.bots.duration_ms);
    let timeline = run.bots.timeline();
    let mut next = 0;
    loop {
        while let Some((role, step)) = timeline.get(next) {
            if step.time > s.clock() {
                break;
            }
            if let Some(a) = &step.action {
                let non_shockable = !s.patient().rhythm.is_shockable();
                let out = s
                    .submit_action(&bot_client(*role), a.clone())
                    .map_err(|e| e.to_string())?;
                if non_shockable
                    && out.iter().any(|e| {
                        e.performed_action()
                            .is_some_and(|p| p.name() == ActionName::DeliverShock)
                    })
                {
                    ck.stats.nonshockable_shocks += 1;
                }
            }
            next += 1;
            ck.check(&s)?;
        }
        if s.clock() >= end {
            break;
        }
        s.tick().map_err(|e| e.to_string())?;
        ck.stats.ticks += 1;
        ck.check(&s)?;
    }
    s.end_session(EndReason::Completed)
        .map_err(|e| e.to_string())?;
    let live = SessionLog {
        header: codeteam_core::logstore::LogHeader::for_session(&s, None),
        events: s.events().to_vec(),
    };
    let headless = simulate(&run.scenario, &run.bots, run.seed, opts).map_err(|e| e.to_string())?;
    if live != headless {
        return Err("headless simulation differs from the checked session".into());
    }
    Ok(ck.stats)
}
