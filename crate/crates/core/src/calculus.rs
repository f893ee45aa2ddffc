//! Temporal and probabilistic fairness calculus.
//!
//! Trace classification reads a finite sequence of consolidation outcomes as
//! a prefix of an infinite run and asks whether fair states keep recurring.
//! The probabilistic half turns table counts into fair/unfair/unsure
//! probabilities, a boolean decision and a fairness quotient.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verifier::EpochLedger;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalculusError {
    #[error("empty fairness trace")]
    EmptyTrace,
    #[error("classification window must be positive")]
    ZeroWindow,
    #[error("no samples recorded in the current epoch")]
    NoSamples,
    #[error("threshold {name} = {value} outside [0, 1]")]
    ThresholdRange { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FairnessState {
    CurrFair,
    CurrUnfair,
    CurrUnsure,
}

impl FairnessState {
    pub fn is_fair(self) -> bool {
        self == FairnessState::CurrFair
    }

    pub fn symbol(self) -> char {
        match self {
            FairnessState::CurrFair => 'F',
            FairnessState::CurrUnfair => 'X',
            FairnessState::CurrUnsure => 'U',
        }
    }
}

impl fmt::Display for FairnessState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FairnessState::CurrFair => "fair",
            FairnessState::CurrUnfair => "unfair",
            FairnessState::CurrUnsure => "unsure",
        })
    }
}

/// States observed at consecutive consolidation checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FairnessTrace(pub Vec<FairnessState>);

impl FairnessTrace {
    pub fn new(states: Vec<FairnessState>) -> Self {
        Self(states)
    }

    pub fn push(&mut self, s: FairnessState) {
        self.0.push(s);
    }

    pub fn states(&self) -> &[FairnessState] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceClass {
    BrokeredFair,
    Unfair,
    Indeterminate,
}

/// Bounded-window reading of "fair states recur forever".
///
/// * `BrokeredFair`: the trace spans at least one window and every run of
///   non-fair states is shorter than `window`.
/// * `Unfair`: the trace ends in `window` or more non-fair states.
/// * `Indeterminate`: anything else (too short, or an old gap that the
///   trace has since recovered from).
pub fn classify_trace(trace: &FairnessTrace, window: usize) -> Result<TraceClass, CalculusError> {
    if window == 0 {
        return Err(CalculusError::ZeroWindow);
    }
    if trace.is_empty() {
        return Err(CalculusError::EmptyTrace);
    }
    if trace.len() < window {
        return Ok(TraceClass::Indeterminate);
    }
    let mut run = 0usize;
    let mut longest = 0usize;
    for s in trace.states() {
        run = if s.is_fair() { 0 } else { run + 1 };
        longest = longest.max(run);
    }
    Ok(if run >= window {
        TraceClass::Unfair
    } else if longest < window {
        TraceClass::BrokeredFair
    } else {
        TraceClass::Indeterminate
    })
}

/// Fair / unfair / unsure probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityTriple {
    pub phi: f64,
    pub mu: f64,
    pub tau: f64,
    /// Set when the raw unsure estimate had to be cut back so that `mu`
    /// would not go negative.
    #[serde(default)]
    pub boundary_adjusted: bool,
}

impl ProbabilityTriple {
    pub fn new(phi: f64, mu: f64, tau: f64) -> Self {
        Self { phi, mu, tau, boundary_adjusted: false }
    }

    pub fn sum(&self) -> f64 {
        self.phi + self.mu + self.tau
    }

    pub fn is_valid(&self) -> bool {
        [self.phi, self.mu, self.tau].iter().all(|p| (0.0..=1.0).contains(p))
            && (self.sum() - 1.0).abs() <= 1e-9
    }
}

/// How the unsure component is predicted from movement history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauMode {
    /// Previous epoch's movement ratio minus the current one.
    #[default]
    TwoEpoch,
    /// Weighted trend over all earlier epochs, weights halving with age.
    Weighted,
}

fn movement_ratio(l: &EpochLedger) -> Option<f64> {
    let total = l.total_units();
    (total > 0).then(|| l.moved_units as f64 / total as f64)
}

fn assemble(current: &EpochLedger, expected_ratio: Option<f64>) -> Result<ProbabilityTriple, CalculusError> {
    let total = current.total_units();
    if total == 0 {
        return Err(CalculusError::NoSamples);
    }
    let phi = current.fair_units as f64 / total as f64;
    let raw_tau = match expected_ratio {
        Some(prev) => (prev - current.moved_units as f64 / total as f64).max(0.0),
        None => 0.0,
    };
    // mu = 1 - phi - tau must stay non-negative; phi is never rescaled.
    let room = 1.0 - phi;
    let (tau, boundary_adjusted) = if raw_tau > room { (room, true) } else { (raw_tau, false) };
    let mu = (1.0 - phi - tau).max(0.0);
    Ok(ProbabilityTriple { phi, mu, tau, boundary_adjusted })
}

/// Estimate the triple from the current epoch and the one before it.
/// Without a usable previous epoch no further movement is predicted.
pub fn estimate_triple(
    current: &EpochLedger,
    previous: Option<&EpochLedger>,
) -> Result<ProbabilityTriple, CalculusError> {
    assemble(current, previous.and_then(movement_ratio))
}

/// Like [`estimate_triple`] but trends the movement ratio over `history`
/// (oldest first) with weights 1, 1/2, 1/4, ... from the newest epoch back.
pub fn estimate_triple_weighted(
    current: &EpochLedger,
    history: &[EpochLedger],
) -> Result<ProbabilityTriple, CalculusError> {
    let mut weight = 1.0;
    let (mut acc, mut norm) = (0.0, 0.0);
    for ratio in history.iter().rev().filter_map(movement_ratio) {
        acc += weight * ratio;
        norm += weight;
        weight *= 0.5;
    }
    assemble(current, (norm > 0.0).then(|| acc / norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionThresholds {
    pub min_fair: f64,
    pub max_unfair: f64,
}

impl Default for DecisionThresholds {
    fn default() -> Self {
        Self { min_fair: 0.6, max_unfair: 0.2 }
    }
}

impl DecisionThresholds {
    pub fn new(min_fair: f64, max_unfair: f64) -> Result<Self, CalculusError> {
        let t = Self { min_fair, max_unfair };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), CalculusError> {
        for (name, value) in [("min_fair", self.min_fair), ("max_unfair", self.max_unfair)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(CalculusError::ThresholdRange { name, value });
            }
        }
        Ok(())
    }
}

/// Fair when enough probability mass is fair and little is unfair, or when
/// fair plus unsure mass leaves at most `max_unfair` for unfairness.
pub fn decide(triple: &ProbabilityTriple, thresholds: &DecisionThresholds) -> bool {
    (triple.phi >= thresholds.min_fair && triple.mu <= thresholds.max_unfair)
        || triple.phi + triple.tau >= 1.0 - thresholds.max_unfair
}

/// Fairness and unfairness quotients, splitting unsure mass evenly.
/// The unfairness quotient is the complement so the pair sums to one exactly.
pub fn quotient(triple: &ProbabilityTriple) -> (f64, f64) {
    let fq = (triple.phi + triple.tau / 2.0).clamp(0.0, 1.0);
    (fq, 1.0 - fq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use FairnessState::{CurrFair as F, CurrUnsure as U};

    fn ledger(fair: u64, unsure: u64, moved: u64) -> EpochLedger {
        EpochLedger { fair_units: fair, unsure_units: unsure, moved_units: moved, ..EpochLedger::default() }
    }

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn classify_examples() {
        let t = FairnessTrace::new(vec![U, U, F, U, F, U, F, U]);
        assert_eq!(classify_trace(&t, 3).unwrap(), TraceClass::BrokeredFair);
        let t = FairnessTrace::new(vec![U; 5]);
        assert_eq!(classify_trace(&t, 3).unwrap(), TraceClass::Unfair);
        let t = FairnessTrace::new(vec![F, F, U, U, U, U]);
        assert_eq!(classify_trace(&t, 3).unwrap(), TraceClass::Unfair);
    }

    #[test]
    fn classify_short_and_recovered() {
        let t = FairnessTrace::new(vec![U, U]);
        assert_eq!(classify_trace(&t, 3).unwrap(), TraceClass::Indeterminate);
        let t = FairnessTrace::new(vec![U, U, U, F, F, F]);
        assert_eq!(classify_trace(&t, 3).unwrap(), TraceClass::Indeterminate);
    }

    #[test]
    fn classify_errors() {
        assert_eq!(classify_trace(&FairnessTrace::default(), 3), Err(CalculusError::EmptyTrace));
        assert_eq!(classify_trace(&FairnessTrace::new(vec![F]), 0), Err(CalculusError::ZeroWindow));
    }

    #[test]
    fn estimate_examples() {
        let t = estimate_triple(&ledger(30, 10, 2), Some(&ledger(25, 15, 5))).unwrap();
        assert!(approx(t.phi, 0.75) && approx(t.tau, 0.075) && approx(t.mu, 0.175));

        // Movement ratio rose from 0.05 to 0.10: tau clamps to zero.
        let t = estimate_triple(&ledger(30, 10, 4), Some(&ledger(30, 10, 2))).unwrap();
        assert_eq!(t.tau, 0.0);
        assert!(approx(t.mu, 1.0 - t.phi));

        let t = estimate_triple(&ledger(40, 0, 0), Some(&ledger(40, 0, 0))).unwrap();
        assert_eq!((t.phi, t.tau, t.mu), (1.0, 0.0, 0.0));
    }

    #[test]
    fn first_epoch_has_no_tau() {
        let t = estimate_triple(&ledger(3, 1, 0), None).unwrap();
        assert_eq!(t.tau, 0.0);
        assert!(approx(t.mu, 0.25));
    }

    #[test]
    fn mu_never_negative() {
        let t = estimate_triple(&ledger(9, 1, 0), Some(&ledger(2, 8, 2))).unwrap();
        assert!(t.boundary_adjusted);
        assert_eq!(t.mu, 0.0);
        assert!(t.is_valid());
    }

    #[test]
    fn no_samples() {
        assert_eq!(estimate_triple(&ledger(0, 0, 0), None), Err(CalculusError::NoSamples));
    }

    #[test]
    fn weighted_tau() {
        // Ratios 0.4 (older) and 0.2 (newer): trend (0.2 + 0.5*0.4) / 1.5.
        let hist = [ledger(10, 0, 4), ledger(10, 0, 2)];
        let t = estimate_triple_weighted(&ledger(5, 5, 0), &hist).unwrap();
        assert!(approx(t.tau, 0.4 / 1.5));
        let single = estimate_triple_weighted(&ledger(8, 2, 0), &hist[1..]).unwrap();
        let two = estimate_triple(&ledger(8, 2, 0), Some(&hist[1])).unwrap();
        assert_eq!(single, two);
    }

    #[test]
    fn decide_examples() {
        let th = DecisionThresholds::default();
        assert!(decide(&ProbabilityTriple::new(0.7, 0.1, 0.2), &th));
        assert!(decide(&ProbabilityTriple::new(0.5, 0.1, 0.4), &th));
        assert!(!decide(&ProbabilityTriple::new(0.3, 0.6, 0.1), &th));
    }

    #[test]
    fn quotient_examples() {
        let (fq, uq) = quotient(&ProbabilityTriple::new(0.8, 0.1, 0.1));
        assert!(approx(fq, 0.85) && approx(uq, 0.15));
        assert_eq!(quotient(&ProbabilityTriple::new(1.0, 0.0, 0.0)).0, 1.0);
        assert_eq!(quotient(&ProbabilityTriple::new(0.0, 0.0, 1.0)), (0.5, 0.5));
    }

    #[test]
    fn thresholds_validated() {
        assert!(DecisionThresholds::new(1.2, 0.1).is_err());
        assert!(DecisionThresholds::new(0.6, -0.1).is_err());
    }
}
