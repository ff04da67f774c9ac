#![allow(dead_code)]

pub mod machine;
pub mod oracles;
pub mod strategies;
pub mod tamper;

use std::path::PathBuf;

use codeteam_core::bots::{simulate, BotScript, SimOptions};
use codeteam_core::logstore::SessionLog;
use codeteam_core::scenario::{load_scenario, ScenarioDef};

pub fn fixture_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture_path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub fn scenario(id: &str) -> ScenarioDef {
    load_scenario(&read_fixture(&format!("scenarios/{id}.json"))).unwrap()
}

pub fn perfect_bots(id: &str) -> BotScript {
    BotScript::parse(&read_fixture(&format!("bots/{id}.perfect.json"))).unwrap()
}

pub fn run(id: &str, bots: &BotScript, seed: u64) -> (ScenarioDef, SessionLog) {
    let sc = scenario(id);
    let log = simulate(&sc, bots, seed, SimOptions::default()).unwrap();
    (sc, log)
}
