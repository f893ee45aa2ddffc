//! Independent oracles and property tests for the core rules.

mod common;

use common::{ledger, max_min_mismatches, trace_mismatches, triple_oracle_errors};
use fairbroker::adaptive::{ControllerMode, ControllerState, FeedbackEvent};
use fairbroker::calculus::{decide, estimate_triple, quotient, DecisionThresholds, FairnessState, ProbabilityTriple};
use fairbroker::cloudsim::{broker_provision, BrokerPolicy, DeficitLedger, SupplierState};
use fairbroker::domain::{efficient_fair_reference, is_equitable, Apportionment, BottleneckProfile, Color, ProvisioningRequest};
use fairbroker::harness::{AdaptiveSetting, ExperimentConfig};
use fairbroker::verifier::{read_audit, write_audit, AuditRecord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn max_min_matches_enumeration() {
    let (checked, bad) = max_min_mismatches();
    assert_eq!(checked, 12 * (1 + 3 + 7 + 15));
    assert_eq!(bad, 0);
}

#[test]
fn trace_classifier_matches_sliding_window_short() {
    for w in 1..=4 {
        for len in 1..=8 {
            assert_eq!(trace_mismatches(len, w).1, 0, "len {len} window {w}");
        }
    }
}

#[test]
fn triple_matches_rationals() {
    let (worst, clamps) = triple_oracle_errors(14);
    assert!(worst <= 1e-12, "worst error {worst}");
    assert!(clamps >= 5);
}

#[test]
fn triple_without_history_is_phi_mu() {
    let t = estimate_triple(&ledger(30, 10, 4), None).unwrap();
    assert_eq!((t.phi, t.mu, t.tau), (0.75, 0.25, 0.0));
}

fn supplier_strategy() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0u32..60, 1..7)
}

proptest! {
    #[test]
    fn provisioning_conserves_size(
        caps in supplier_strategy(),
        sizes in prop::collection::vec(1u32..=50, 1..20),
        kind in 0u8..3,
        chunk in 1u32..12,
        rate in 0.25f64..=0.45,
    ) {
        let n = caps.len();
        let policy = match kind {
            0 => BrokerPolicy::epoch_fair_chunked(chunk),
            1 => BrokerPolicy::biased(n - 1, rate),
            _ => BrokerPolicy::size_dependent(0, rate, 25),
        };
        let mut suppliers: Vec<SupplierState> =
            caps.iter().enumerate().map(|(i, &c)| SupplierState::uniform(i, 1, c, 1.0)).collect();
        let mut ledger = DeficitLedger::new(n);
        for size in sizes {
            let before: Vec<u32> = suppliers.iter().map(|s| s.remaining(Color(0)).unwrap()).collect();
            let req = ProvisioningRequest::new(size, Color(0), 2.0, 50).unwrap();
            match broker_provision(&policy, &req, &mut suppliers, &mut ledger) {
                Ok(r) => {
                    prop_assert_eq!(r.apportionment.total(), u64::from(size));
                    for (i, s) in suppliers.iter().enumerate() {
                        let used = before[i] - s.remaining(Color(0)).unwrap();
                        prop_assert_eq!(used, r.apportionment.counts()[i]);
                    }
                }
                Err(e) => {
                    prop_assert!(e.is_unsatisfiable());
                    prop_assert!(before.iter().map(|&c| u64::from(c)).sum::<u64>() < u64::from(size)
                        || before.iter().all(|&c| c == 0));
                }
            }
        }
    }

    #[test]
    fn reference_is_max_min(size in 0u32..200, flags in prop::collection::vec(any::<bool>(), 1..8)) {
        prop_assume!(flags.iter().any(|b| !b));
        let r = efficient_fair_reference(size, &BottleneckProfile::new(flags.clone())).unwrap();
        prop_assert_eq!(r.total(), u64::from(size));
        let live: Vec<u32> = r.counts().iter().zip(&flags).filter(|(_, &b)| !b).map(|(&c, _)| c).collect();
        let (lo, hi) = (live.iter().min().unwrap(), live.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        for (c, b) in r.counts().iter().zip(&flags) {
            if *b { prop_assert_eq!(*c, 0); }
        }
    }

    #[test]
    fn equity_monotone_in_tolerance(
        pairs in prop::collection::vec((0u32..20, 0u32..20), 1..6),
        tol in 0u64..10,
    ) {
        let a: Vec<u32> = pairs.iter().map(|p| p.0).collect();
        let mut b: Vec<u32> = pairs.iter().map(|p| p.1).collect();
        let (sa, sb) = (a.iter().sum::<u32>(), b.iter().sum::<u32>());
        prop_assume!(sb <= sa);
        b[0] += sa - sb;
        let (a, b) = (Apportionment::new(a), Apportionment::new(b));
        if is_equitable(&a, &b, tol).unwrap() {
            prop_assert!(is_equitable(&a, &b, tol + 1).unwrap());
        }
    }

    #[test]
    fn triple_is_a_distribution(
        fair in 0u64..500, unsure in 0u64..500, moved_frac in 0.0f64..=1.0,
        pf in 0u64..500, pu in 0u64..500, pm_frac in 0.0f64..=1.0,
    ) {
        prop_assume!(fair + unsure > 0);
        let cur = ledger(fair, unsure, (fair as f64 * moved_frac) as u64);
        let prev = ledger(pf, pu, (pf as f64 * pm_frac) as u64);
        let t = estimate_triple(&cur, Some(&prev)).unwrap();
        prop_assert!(t.is_valid(), "{:?}", t);
        let (fq, uq) = quotient(&t);
        prop_assert_eq!(fq + uq, 1.0);
    }

    #[test]
    fn looser_thresholds_never_flip_fair_to_unfair(
        phi in 0.0f64..=1.0, tau_frac in 0.0f64..=1.0,
        min_fair in 0.0f64..=1.0, max_unfair in 0.0f64..=1.0,
        d1 in 0.0f64..0.3, d2 in 0.0f64..0.3,
    ) {
        let tau = (1.0 - phi) * tau_frac;
        let t = ProbabilityTriple::new(phi, 1.0 - phi - tau, tau);
        let strict = DecisionThresholds { min_fair, max_unfair };
        let loose = DecisionThresholds { min_fair: (min_fair - d1).max(0.0), max_unfair: (max_unfair + d2).min(1.0) };
        if decide(&t, &strict) {
            prop_assert!(decide(&t, &loose));
        }
    }

    #[test]
    fn vb_error_then_correct_is_identity(steps in 0usize..10) {
        let mut s = ControllerState::default();
        for _ in 0..steps {
            s = s.apply_feedback(FeedbackEvent::CorrectEvaluation);
        }
        let back = s.apply_feedback(FeedbackEvent::FalsePositive).apply_feedback(FeedbackEvent::CorrectEvaluation);
        prop_assert_eq!(back.thresholds, s.thresholds);
    }

    #[test]
    fn audit_round_trip(
        epoch in 0u64..10, probe in 0u64..100, time in 0.0f64..1e6,
        size in 1u32..=50, counts in prop::collection::vec(0u32..30, 1..6),
        moved in 0u64..50, kind in 0u8..3, st in 0u8..3,
    ) {
        let state = [FairnessState::CurrFair, FairnessState::CurrUnfair, FairnessState::CurrUnsure][st as usize];
        let color = Color(0);
        let rec = match kind {
            0 => AuditRecord::Probe { epoch, probe, time, size, color, apportionment: Apportionment::new(counts), state },
            1 => AuditRecord::Skipped { epoch, probe, time, size, color },
            _ => AuditRecord::Consolidation { epoch, probe, time, state, moved },
        };
        let mut buf = Vec::new();
        write_audit(&mut buf, std::slice::from_ref(&rec)).unwrap();
        let back = read_audit(buf.as_slice()).unwrap();
        prop_assert_eq!(back, vec![rec]);
    }

    #[test]
    fn config_round_trip(
        seeds in prop::collection::vec(any::<u64>(), 1..5),
        vp in 0.01f64..=1.0,
        samples in 1u32..300,
        min_fair in 0.5f64..0.95,
        adaptive in 0u8..3,
    ) {
        let mut cfg = ExperimentConfig { seeds, verdict_point: vp, ..ExperimentConfig::default() };
        cfg.verifier.samples_per_epoch = samples;
        cfg.verifier.thresholds.min_fair = min_fair;
        cfg.adaptive = [AdaptiveSetting::Off, AdaptiveSetting::PaperVb, AdaptiveSetting::PaperIvc][adaptive as usize]
            .controller(None);
        let text = cfg.to_toml().unwrap();
        prop_assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }
}

#[test]
fn controller_bounds_hold_over_random_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(416);
    let events = [FeedbackEvent::FalsePositive, FeedbackEvent::FalseNegative, FeedbackEvent::CorrectEvaluation];
    for i in 0..10_000 {
        let mode = if i % 2 == 0 { ControllerMode::PaperVb } else { ControllerMode::PaperIvc };
        let mut s = ControllerState::with_mode(mode);
        for _ in 0..rng.gen_range(1..60) {
            s = s.apply_feedback(events[rng.gen_range(0..3)]);
            assert!(s.within_bounds(), "{s:?}");
            assert!(s.epoch_length <= s.bounds.max_epoch_length);
        }
    }
}
