//! Feedback tuning of the decision thresholds.
//!
//! Whoever knows the ground truth (the simulation harness, or an external
//! disclosure) classifies each evaluation as a false positive, a false
//! negative or correct, and the controller nudges its parameters by a notch.

use serde::{Deserialize, Serialize};

use crate::calculus::DecisionThresholds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackEvent {
    /// An unfair broker was declared fair.
    FalsePositive,
    /// A fair broker was declared unfair.
    FalseNegative,
    CorrectEvaluation,
}

impl FeedbackEvent {
    /// Grade a decision (`true` = declared fair) against the ground truth.
    pub fn grade(truly_fair: bool, declared_fair: bool) -> Self {
        match (truly_fair, declared_fair) {
            (false, true) => FeedbackEvent::FalsePositive,
            (true, false) => FeedbackEvent::FalseNegative,
            _ => FeedbackEvent::CorrectEvaluation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerMode {
    /// Errors tighten thresholds, correct calls loosen them (threshold only).
    PaperVb,
    /// Error-specific threshold steps plus sample-size and epoch tuning.
    PaperIvc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerBounds {
    pub min_fair: (f64, f64),
    pub max_unfair: (f64, f64),
    /// Sample budget per epoch; the upper end is the cost cap.
    pub samples: (u32, u32),
    pub max_epoch_length: f64,
}

impl Default for ControllerBounds {
    fn default() -> Self {
        Self {
            min_fair: (0.5, 0.95),
            max_unfair: (0.05, 0.5),
            samples: (5, 400),
            max_epoch_length: 4.0 * 3600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub thresholds: DecisionThresholds,
    pub samples_per_epoch: u32,
    /// Simulated seconds.
    pub epoch_length: f64,
    pub mode: ControllerMode,
    pub notch: f64,
    #[serde(default)]
    pub bounds: ControllerBounds,
    /// Samples added (or removed) per adjustment.
    #[serde(default = "default_sample_step")]
    pub sample_step: u32,
    /// Consecutive correct evaluations before the epoch is lengthened.
    #[serde(default = "default_streak")]
    pub streak_target: u32,
    #[serde(default = "default_epoch_growth")]
    pub epoch_growth: f64,
    #[serde(default)]
    pub correct_streak: u32,
}

fn default_sample_step() -> u32 {
    5
}

fn default_streak() -> u32 {
    5
}

fn default_epoch_growth() -> f64 {
    1.25
}

impl Default for ControllerState {
    fn default() -> Self {
        Self {
            thresholds: DecisionThresholds::default(),
            samples_per_epoch: 50,
            epoch_length: 3600.0,
            mode: ControllerMode::PaperVb,
            notch: 0.02,
            bounds: ControllerBounds::default(),
            sample_step: default_sample_step(),
            streak_target: default_streak(),
            epoch_growth: default_epoch_growth(),
            correct_streak: 0,
        }
    }
}

// Keeps repeated +/- notches exactly reversible.
fn snap(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

fn step(x: f64, delta: f64, (lo, hi): (f64, f64)) -> f64 {
    snap((x + delta).clamp(lo, hi))
}

impl ControllerState {
    pub fn with_mode(mode: ControllerMode) -> Self {
        Self { mode, ..Self::default() }
    }

    fn grow_samples(&mut self) {
        let (_, cap) = self.bounds.samples;
        self.samples_per_epoch = self.samples_per_epoch.saturating_add(self.sample_step).min(cap);
    }

    fn shrink_samples(&mut self) {
        let (floor, _) = self.bounds.samples;
        self.samples_per_epoch = self.samples_per_epoch.saturating_sub(self.sample_step).max(floor);
    }

    /// Next controller state after one graded evaluation.
    pub fn apply_feedback(&self, event: FeedbackEvent) -> ControllerState {
        let mut next = self.clone();
        let n = self.notch;
        let b = self.bounds;
        let t = &mut next.thresholds;
        match (self.mode, event) {
            (ControllerMode::PaperVb, FeedbackEvent::CorrectEvaluation) => {
                t.min_fair = step(t.min_fair, -n, b.min_fair);
                t.max_unfair = step(t.max_unfair, n, b.max_unfair);
            }
            (ControllerMode::PaperVb, _) => {
                t.min_fair = step(t.min_fair, n, b.min_fair);
                t.max_unfair = step(t.max_unfair, -n, b.max_unfair);
            }
            (ControllerMode::PaperIvc, FeedbackEvent::FalsePositive) => {
                t.max_unfair = step(t.max_unfair, -n, b.max_unfair);
                next.correct_streak = 0;
                next.grow_samples();
            }
            (ControllerMode::PaperIvc, FeedbackEvent::FalseNegative) => {
                t.min_fair = step(t.min_fair, n, b.min_fair);
                next.correct_streak = 0;
                next.grow_samples();
            }
            (ControllerMode::PaperIvc, FeedbackEvent::CorrectEvaluation) => {
                next.correct_streak += 1;
                if next.correct_streak >= self.streak_target {
                    next.correct_streak = 0;
                    next.epoch_length = (next.epoch_length * self.epoch_growth).min(b.max_epoch_length);
                    next.shrink_samples();
                }
            }
        }
        next
    }

    pub fn within_bounds(&self) -> bool {
        let inside = |x: f64, (lo, hi): (f64, f64)| lo <= x && x <= hi;
        inside(self.thresholds.min_fair, self.bounds.min_fair)
            && inside(self.thresholds.max_unfair, self.bounds.max_unfair)
            && (self.bounds.samples.0..=self.bounds.samples.1).contains(&self.samples_per_epoch)
    }
}
