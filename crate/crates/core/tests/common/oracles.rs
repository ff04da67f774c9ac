//! Independent reference computations used to check the engine.

use codeteam_core::analytics::LoopWindows;
use codeteam_core::logstore::Utterance;
use codeteam_core::model::UtteranceTag;

/// Loops as `(directive, ack, report)` indices into the utterance list.
pub type LoopTriple = (usize, usize, Option<usize>);

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOracle {
    pub loops: Vec<LoopTriple>,
    pub directives: usize,
    pub rate: f64,
}

/// Exhaustive enumeration of every (directive, ack, report-or-none) triple.
///
/// Directives are taken in list order. For each one, every admissible
/// triple over unconsumed utterances is enumerated and the one with the
/// earliest ack, then the earliest report (a report beats none), wins.
/// Chosen acks and reports are consumed.
pub fn closed_loops_brute_force(utts: &[Utterance], w: LoopWindows) -> LoopOracle {
    let has = |u: &Utterance, t: UtteranceTag| u.tags.contains(&t);
    let n = utts.len();
    let mut ack_taken = vec![false; n];
    let mut report_taken = vec![false; n];
    let mut loops = Vec::new();
    let mut directives = 0;
    for d in 0..n {
        if !has(&utts[d], UtteranceTag::Directive) {
            continue;
        }
        directives += 1;
        let dt = utts[d].time.millis();
        let mut best: Option<(usize, usize)> = None;
        for a in 0..n {
            let ua = &utts[a];
            let responder = match utts[d].addressee {
                Some(b) => ua.speaker == b,
                None => ua.speaker != utts[d].speaker,
            };
            let ta = ua.time.millis();
            if ack_taken[a]
                || !has(ua, UtteranceTag::Acknowledgement)
                || !responder
                || ta <= dt
                || ta > dt + w.ack_ms
            {
                continue;
            }
            // usize::MAX stands for "no report".
            for r in (0..n).chain(std::iter::once(usize::MAX)) {
                if r != usize::MAX {
                    let ur = &utts[r];
                    let tr = ur.time.millis();
                    if report_taken[r]
                        || !has(ur, UtteranceTag::Report)
                        || ur.speaker != ua.speaker
                        || tr <= ta
                        || tr > dt + w.report_ms
                    {
                        continue;
                    }
                }
                if best.is_none_or(|b| (a, r) < b) {
                    best = Some((a, r));
                }
            }
        }
        if let Some((a, r)) = best {
            ack_taken[a] = true;
            let report = (r != usize::MAX).then_some(r);
            if let Some(r) = report {
                report_taken[r] = true;
            }
            loops.push((d, a, report));
        }
    }
    let closed = loops.iter().filter(|l| l.2.is_some()).count();
    let rate = if directives == 0 {
        1.0
    } else {
        closed as f64 / directives as f64
    };
    LoopOracle {
        loops,
        directives,
        rate,
    }
}

/// Fraction of the trailing window covered by compressions, counted one
/// millisecond at a time from an on/off toggle timeline.
///
/// `toggles` are the times compressions started or stopped, alternating,
/// starting with a start, in non-decreasing order.
pub fn cpr_fraction_by_millis(toggles: &[u64], now: u64, window: u64) -> f64 {
    let lo = now.saturating_sub(window);
    if now == lo {
        return 0.0;
    }
    let on_at = |t: u64| toggles.partition_point(|x| *x <= t) % 2 == 1;
    let covered = (lo..now).filter(|t| on_at(*t)).count();
    covered as f64 / (now - lo) as f64
}

/// Closed-form solution of dv/dt = (target - v) / tau at time `t_ms`.
pub fn relaxation(v0: f64, target: f64, tau_s: f64, t_ms: u64) -> f64 {
    target + (v0 - target) * (-(t_ms as f64 / 1_000.0) / tau_s).exp()
}

pub fn relative_error(actual: f64, expected: f64) -> f64 {
    let scale = expected.abs().max(1e-12);
    (actual - expected).abs() / scale
}

/// Shannon entropy in bits divided by log2 of the role count.
pub fn normalized_entropy_bits(counts: &[u64], roles: usize) -> f64 {
    let total: u64 = counts.iter().sum();
    let h: f64 = counts
        .iter()
        .filter(|c| **c > 0)
        .map(|c| {
            let p = *c as f64 / total as f64;
            -p * p.log2()
        })
        .sum();
    h / (roles as f64).log2()
}
