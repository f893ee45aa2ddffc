//! Brute-force and exact-arithmetic oracles shared by the test targets.
#![allow(dead_code)]

use fairbroker::calculus::{classify_trace, estimate_triple, FairnessState, FairnessTrace, TraceClass};
use fairbroker::domain::{efficient_fair_reference, BottleneckProfile};
use fairbroker::verifier::EpochLedger;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every way to place `size` units into `slots` ordered bins.
pub fn compositions(size: u32, slots: usize) -> Vec<Vec<u32>> {
    if slots == 0 {
        return if size == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in 0..=size {
        for mut rest in compositions(size - first, slots - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Max-min split by enumeration: maximize the sorted vector, then prefer
/// extra units on lower indices.
pub fn brute_max_min(size: u32, flags: &[bool]) -> Vec<u32> {
    let avail: Vec<usize> = (0..flags.len()).filter(|&i| !flags[i]).collect();
    let mut best: Option<(Vec<u32>, Vec<u32>)> = None;
    for c in compositions(size, avail.len()) {
        let mut full = vec![0; flags.len()];
        for (slot, &i) in avail.iter().enumerate() {
            full[i] = c[slot];
        }
        let mut sorted = c.clone();
        sorted.sort_unstable();
        let better = match &best {
            None => true,
            Some((bs, bf)) => sorted > *bs || (sorted == *bs && full > *bf),
        };
        if better {
            best = Some((sorted, full));
        }
    }
    best.unwrap().1
}

pub fn max_min_mismatches() -> (usize, usize) {
    let (mut checked, mut bad) = (0, 0);
    for n in 1..=4usize {
        for mask in 0u32..(1 << n) {
            let flags: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
            if flags.iter().all(|&b| b) {
                continue;
            }
            let profile = BottleneckProfile::new(flags.clone());
            for size in 1..=12 {
                checked += 1;
                let got = efficient_fair_reference(size, &profile).unwrap();
                if got.counts() != brute_max_min(size, &flags).as_slice() {
                    bad += 1;
                }
            }
        }
    }
    (checked, bad)
}

/// Sliding-window reading of "always eventually fair" on a finite trace.
pub fn brute_classify(states: &[FairnessState], w: usize) -> TraceClass {
    if states.len() < w {
        return TraceClass::Indeterminate;
    }
    let has_fair = |win: &[FairnessState]| win.iter().any(|s| s.is_fair());
    if !has_fair(&states[states.len() - w..]) {
        TraceClass::Unfair
    } else if states.windows(w).all(has_fair) {
        TraceClass::BrokeredFair
    } else {
        TraceClass::Indeterminate
    }
}

pub fn trace_mismatches(len: u32, w: usize) -> (usize, usize) {
    use FairnessState::*;
    let alphabet = [CurrFair, CurrUnfair, CurrUnsure];
    let (mut checked, mut bad) = (0, 0);
    for code in 0..3u32.pow(len) {
        let mut c = code;
        let states: Vec<FairnessState> = (0..len)
            .map(|_| {
                let s = alphabet[(c % 3) as usize];
                c /= 3;
                s
            })
            .collect();
        checked += 1;
        let got = classify_trace(&FairnessTrace::new(states.clone()), w).unwrap();
        if got != brute_classify(&states, w) {
            bad += 1;
        }
    }
    (checked, bad)
}

pub fn ledger(fair: u64, unsure: u64, moved: u64) -> EpochLedger {
    EpochLedger { fair_units: fair, unsure_units: unsure, moved_units: moved, ..EpochLedger::default() }
}

/// Exact rational recomputation of the triple. Returns (phi, mu, tau, clamped).
pub fn rational_triple(cur: &EpochLedger, prev: &EpochLedger) -> (Ratio<i64>, Ratio<i64>, Ratio<i64>, bool) {
    let r = |a: u64, b: u64| Ratio::new(a as i64, b as i64);
    let zero = Ratio::from_integer(0);
    let one = Ratio::from_integer(1);
    let total = cur.fair_units + cur.unsure_units;
    let phi = r(cur.fair_units, total);
    let prev_total = prev.fair_units + prev.unsure_units;
    let raw = if prev_total == 0 {
        zero
    } else {
        (r(prev.moved_units, prev_total) - r(cur.moved_units, total)).max(zero)
    };
    let room = one - phi;
    let clamped = raw > room;
    let tau = if clamped { room } else { raw };
    (phi, one - phi - tau, tau, clamped)
}

pub fn to_f64(x: Ratio<i64>) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

/// 50 random ledger pairs, a share of them built to hit the clamp.
/// Returns the worst absolute error and the number of clamp cases.
pub fn triple_oracle_errors(seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut clamps) = (0.0f64, 0usize);
    for i in 0..50 {
        let total = rng.gen_range(1..=200u64);
        let (cur, prev) = if i % 5 == 0 {
            // High previous movement, none now, fair share near one.
            let unsure = rng.gen_range(0..=total / 10);
            let pt = rng.gen_range(1..=200u64);
            (ledger(total - unsure, unsure, 0), ledger(pt, 0, pt))
        } else {
            let fair = rng.gen_range(0..=total);
            let moved = rng.gen_range(0..=fair);
            let pt = rng.gen_range(0..=200u64);
            let pf = rng.gen_range(0..=pt);
            (ledger(fair, total - fair, moved), ledger(pf, pt - pf, rng.gen_range(0..=pf)))
        };
        let got = estimate_triple(&cur, Some(&prev)).unwrap();
        let (phi, mu, tau, clamped) = rational_triple(&cur, &prev);
        clamps += usize::from(clamped);
        assert_eq!(got.boundary_adjusted, clamped, "clamp flag for {cur:?} / {prev:?}");
        for (a, b) in [(got.phi, phi), (got.mu, mu), (got.tau, tau)] {
            worst = worst.max((a - to_f64(b)).abs());
        }
    }
    (worst, clamps)
}
