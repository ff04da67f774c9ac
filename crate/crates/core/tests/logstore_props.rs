mod common;

use std::collections::BTreeSet;

use codeteam_core::analytics::{build_report, LoopWindows};
use codeteam_core::bots::{simulate, SimOptions};
use codeteam_core::logstore::{
    ingest_telemetry, ingest_transcript, state_at, verify_determinism, IngestError, LogWriter, Replayer, SessionLog,
    TelemetrySample, Utterance,
};
use codeteam_core::model::{decode_event, encode_event, Origin, Role, SimTime, TelemetryChannel, UtteranceTag};
use common::machine::{random_run, RandomRun};
use common::tamper::tamper;
use proptest::prelude::*;
use proptest::sample::select;

fn log_of(run: &RandomRun) -> SessionLog {
    simulate(&run.scenario, &run.bots, run.seed, SimOptions::default()).unwrap()
}

/// Valid samples: one per (user, channel, time) key, times within `[0, end]`.
fn telemetry(end: u64) -> impl Strategy<Value = Vec<TelemetrySample>> {
    let channels = vec![TelemetryChannel::GazeX, TelemetryChannel::GazeY, TelemetryChannel::HeartRate, TelemetryChannel::PupilDiameter, TelemetryChannel::CognitiveLoad];
    prop::collection::btree_map(
        (select(Role::TRAINEES.to_vec()), select(channels), 0..=end),
        0.0..=1.0f64,
        0..60,
    )
    .prop_map(|m| m.into_iter().map(|((user, channel, t), value)| TelemetrySample { user, channel, time: SimTime(t), value }).collect())
}

fn transcript(end: u64) -> impl Strategy<Value = Vec<Utterance>> {
    prop::collection::btree_map(
        (select(Role::TRAINEES.to_vec()), 0..=end, "[a-z]{1,8}"),
        (prop::collection::btree_set(select(UtteranceTag::ALL.to_vec()), 0..3), prop::option::of(select(Role::TRAINEES.to_vec()))),
        0..30,
    )
    .prop_map(|m| {
        m.into_iter()
            .map(|((speaker, t, text), (tags, addressee))| Utterance { speaker, time: SimTime(t), text, tags, addressee, orders_action: None })
            .collect()
    })
}

fn run_with_batches() -> impl Strategy<Value = (RandomRun, Vec<TelemetrySample>, Vec<Utterance>)> {
    random_run().prop_flat_map(|run| {
        let end = run.bots.duration_ms;
        (Just(run), telemetry(end), transcript(end))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn file_round_trip_is_identity((run, samples, utts) in run_with_batches()) {
        let log = ingest_transcript(&ingest_telemetry(&log_of(&run), &samples).unwrap(), &utts).unwrap();
        log.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.cts");
        log.write(&path).unwrap();
        prop_assert_eq!(&SessionLog::read(&path).unwrap(), &log);

        let streamed = dir.path().join("w.cts");
        let mut w = LogWriter::create(&streamed, &log.header).unwrap();
        for e in &log.events {
            w.append(e).unwrap();
            prop_assert_eq!(decode_event(&encode_event(e).unwrap()).unwrap(), e.clone());
        }
        w.finish().unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&streamed).unwrap());
    }

    #[test]
    fn state_at_agrees_with_incremental_folding(run in random_run(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let log = log_of(&run);
        let end = log.end_time().millis();
        let (t1, t2) = {
            let x = (end as f64 * a) as u64;
            let y = (end as f64 * b) as u64;
            (SimTime(x.min(y)), SimTime(x.max(y)))
        };
        let mut r = Replayer::new(&log, None).unwrap();
        r.advance_to(t1).unwrap();
        prop_assert_eq!(r.state(), state_at(&log, t1, None).unwrap());
        r.advance_to(t2).unwrap();
        prop_assert_eq!(r.state(), state_at(&log, t2, None).unwrap());
    }

    #[test]
    fn ingestion_keeps_verdict_and_report((run, samples, utts) in run_with_batches()) {
        let log = log_of(&run);
        prop_assert!(verify_determinism(&log, None).unwrap().ok);
        let with_tel = ingest_telemetry(&log, &samples).unwrap();
        prop_assert!(verify_determinism(&with_tel, None).unwrap().ok);
        let windows = LoopWindows::default();
        prop_assert_eq!(
            build_report(&with_tel, &run.scenario, windows).unwrap().to_json_pretty(),
            build_report(&log, &run.scenario, windows).unwrap().to_json_pretty()
        );
        let with_both = ingest_transcript(&with_tel, &utts).unwrap();
        prop_assert!(verify_determinism(&with_both, None).unwrap().ok);
    }

    #[test]
    fn same_batch_twice_is_rejected((run, samples, utts) in run_with_batches()) {
        prop_assume!(!samples.is_empty() && !utts.is_empty());
        let log = log_of(&run);
        let once = ingest_telemetry(&log, &samples).unwrap();
        let again = ingest_telemetry(&once, &samples);
        prop_assert!(matches!(again, Err(IngestError::Duplicate { .. })), "{:?}", again.map(|l| l.events.len()));
        let once = ingest_transcript(&log, &utts).unwrap();
        let again = ingest_transcript(&once, &utts);
        prop_assert!(matches!(again, Err(IngestError::Duplicate { .. })), "{:?}", again.map(|l| l.events.len()));
    }

    #[test]
    fn tampered_internal_event_is_reported_at_its_seq(run in random_run(), pick in any::<prop::sample::Index>(), salt in any::<usize>()) {
        let log = log_of(&run);
        let internal: Vec<usize> = log.events.iter().enumerate().filter(|(_, e)| e.origin == Origin::Internal).map(|(i, _)| i).collect();
        let i = internal[pick.index(internal.len())];
        let mut bad = log.clone();
        prop_assert!(tamper(&mut bad.events[i], salt));
        let v = verify_determinism(&bad, None).unwrap();
        prop_assert!(!v.ok);
        prop_assert_eq!(v.divergent_seq, Some(log.events[i].seq), "{:?}", v.detail);
    }
}

#[test]
fn ingested_kinds_are_external_and_sorted() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let (run, samples, utts) = proptest::strategy::ValueTree::current(&run_with_batches().new_tree(&mut runner).unwrap());
    let merged = ingest_transcript(&ingest_telemetry(&log_of(&run), &samples).unwrap(), &utts).unwrap();
    merged.validate().unwrap();
    let kinds: BTreeSet<_> = merged.events.iter().filter(|e| !e.is_simulation_event()).map(|e| e.origin).collect();
    assert!(kinds.iter().all(|o| *o == Origin::External));
}
