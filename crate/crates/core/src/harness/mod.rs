//! Simulation experiments: broker populations evaluated by the verifier
//! under fixed seeds, with optional adaptive feedback and cost sweeps.

mod config;
mod report;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    default_seeds, AdaptiveSetting, BrokerEntry, BrokerSpec, ExperimentConfig, GroundTruth, PopulationConfig,
};
pub use report::{emit_reports, replay, ConfusionMatrix, Manifest, ManifestCommand, ReportRow, SweepPoint};

use crate::adaptive::{ControllerState, FeedbackEvent};
use crate::cloudsim::{SimError, SimulatedBroker, SupplierTemplate};
use crate::verifier::{FairnessVerdict, Verifier, VerifierConfig, VerifierError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("broker {broker}, seed {seed}: {source}")]
    Run {
        broker: usize,
        seed: u64,
        #[source]
        source: VerifierError,
    },
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}

/// Fully resolved experiment. Everything a run depends on is in here, so a
/// serialized spec reproduces the run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub brokers: Vec<BrokerSpec>,
    pub suppliers: SupplierTemplate,
    pub verifier: VerifierConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptive: Option<ControllerState>,
    pub seeds: Vec<u64>,
    /// Fraction of the current epoch observed before the verdict.
    pub verdict_point: f64,
    /// Complete epochs run before the evaluated one.
    pub warmup_epochs: u32,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.brokers.is_empty() {
            return Err(HarnessError::Config("no brokers".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("no seeds".into()));
        }
        if !(self.verdict_point > 0.0 && self.verdict_point <= 1.0) {
            return Err(HarnessError::Config(format!(
                "verdict_point {} must be in (0, 1]",
                self.verdict_point
            )));
        }
        self.verifier.validate()?;
        if self.verifier.color_space != self.suppliers.color_space {
            return Err(HarnessError::Config(format!(
                "verifier color_space {} differs from supplier color_space {}",
                self.verifier.color_space, self.suppliers.color_space
            )));
        }
        self.suppliers.build()?;
        for b in &self.brokers {
            b.policy.validate(self.suppliers.count, self.verifier.max_x)?;
        }
        if let Some(c) = &self.adaptive {
            c.thresholds.validate().map_err(VerifierError::from)?;
            if !c.within_bounds() {
                return Err(HarnessError::Config("adaptive controller starts outside its bounds".into()));
            }
        }
        Ok(())
    }

    /// Samples the verifier must accept in the evaluated epoch.
    pub fn verdict_samples(&self, samples_per_epoch: u32) -> u64 {
        ((self.verdict_point * f64::from(samples_per_epoch)).ceil() as u64).max(1)
    }
}

/// Outcome of evaluating one broker under one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub broker_id: usize,
    pub seed: u64,
    pub ground_truth: GroundTruth,
    /// Accepted probes across warm-up and evaluated epochs.
    pub samples: u64,
    pub vms_provisioned: u64,
    pub verdict: FairnessVerdict,
}

impl Evaluation {
    pub fn event(&self) -> FeedbackEvent {
        FeedbackEvent::grade(self.ground_truth.is_fair(), self.verdict.decision)
    }
}

/// Independent stream per (seed, broker) cell.
pub fn cell_rng(seed: u64, broker: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(broker as u64);
    rng
}

/// Evaluate one broker from a fresh market.
pub fn evaluate_broker(
    spec: &ExperimentSpec,
    broker_id: usize,
    seed: u64,
    config: &VerifierConfig,
) -> Result<Evaluation, HarnessError> {
    let b = &spec.brokers[broker_id];
    let run = |e: VerifierError| HarnessError::Run { broker: broker_id, seed, source: e };
    let mut broker = SimulatedBroker::new(b.policy.clone(), spec.suppliers.build()?, config.max_x)?;
    let mut verifier = Verifier::new(config.clone()).map_err(run)?;
    let mut rng = cell_rng(seed, broker_id);
    for _ in 0..spec.warmup_epochs {
        verifier.run_epoch(&mut broker, &mut rng).map_err(run)?;
    }
    verifier.begin_epoch(&mut broker);
    verifier
        .run_until(&mut broker, &mut rng, spec.verdict_samples(config.samples_per_epoch))
        .map_err(run)?;
    let verdict = verifier.verdict().map_err(run)?;
    let ledgers = verifier.history().iter().chain(std::iter::once(verifier.ledger()));
    let (samples, vms) = ledgers.fold((0, 0), |(s, v), l| (s + l.total_units(), v + l.vms_provisioned));
    Ok(Evaluation {
        broker_id,
        seed,
        ground_truth: b.ground_truth,
        samples,
        vms_provisioned: vms,
        verdict,
    })
}

fn tuned_config(base: &VerifierConfig, c: &ControllerState) -> VerifierConfig {
    VerifierConfig {
        thresholds: c.thresholds,
        samples_per_epoch: c.samples_per_epoch,
        epoch_length: c.epoch_length,
        consolidation_period: base.consolidation_period.filter(|&p| p <= c.samples_per_epoch),
        ..base.clone()
    }
}

/// Brokers evaluated in order, each graded evaluation feeding the controller
/// before the next broker is judged.
fn run_adaptive_seed(
    spec: &ExperimentSpec,
    seed: u64,
    start: &ControllerState,
) -> Result<(Vec<Evaluation>, ControllerState), HarnessError> {
    let mut controller = start.clone();
    let mut out = Vec::with_capacity(spec.brokers.len());
    for id in 0..spec.brokers.len() {
        let e = evaluate_broker(spec, id, seed, &tuned_config(&spec.verifier, &controller))?;
        controller = controller.apply_feedback(e.event());
        out.push(e);
    }
    Ok((out, controller))
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    /// Seed-major, then broker order.
    pub evaluations: Vec<Evaluation>,
    /// Final controller state per seed for adaptive runs.
    pub controllers: Vec<ControllerState>,
}

impl ExperimentReport {
    pub fn confusion(&self) -> ConfusionMatrix {
        ConfusionMatrix::from_evaluations(&self.evaluations)
    }

    pub fn seed_confusion(&self, seed: u64) -> ConfusionMatrix {
        let cell: Vec<_> = self.evaluations.iter().filter(|e| e.seed == seed).cloned().collect();
        ConfusionMatrix::from_evaluations(&cell)
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        self.evaluations.iter().map(ReportRow::from).collect()
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport, HarnessError> {
    spec.validate()?;
    match &spec.adaptive {
        None => {
            let cells: Vec<(u64, usize)> = spec
                .seeds
                .iter()
                .flat_map(|&s| (0..spec.brokers.len()).map(move |b| (s, b)))
                .collect();
            let evaluations = cells
                .par_iter()
                .map(|&(seed, b)| evaluate_broker(spec, b, seed, &spec.verifier))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ExperimentReport { evaluations, controllers: Vec::new() })
        }
        Some(start) => {
            let per_seed = spec
                .seeds
                .par_iter()
                .map(|&seed| run_adaptive_seed(spec, seed, start))
                .collect::<Result<Vec<_>, _>>()?;
            let mut evaluations = Vec::new();
            let mut controllers = Vec::new();
            for (e, c) in per_seed {
                evaluations.extend(e);
                controllers.push(c);
            }
            Ok(ExperimentReport { evaluations, controllers })
        }
    }
}

/// Seed used for one sweep point, so sizes never share probe streams.
pub fn sweep_seed(seed: u64, samples: u32) -> u64 {
    seed ^ u64::from(samples).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Accuracy as a function of the per-epoch sample budget.
pub fn sweep_cost_accuracy(spec: &ExperimentSpec, sizes: &[u32]) -> Result<Vec<SweepPoint>, HarnessError> {
    if sizes.len() < 2 {
        return Err(HarnessError::Config("a sweep needs at least two sample sizes".into()));
    }
    if sizes.contains(&0) {
        return Err(HarnessError::Config("sample sizes must be positive".into()));
    }
    sizes
        .iter()
        .map(|&n| {
            let mut s = spec.clone();
            s.verifier.samples_per_epoch = n;
            s.verifier.consolidation_period = s.verifier.consolidation_period.filter(|&p| p <= n);
            if let Some(c) = &mut s.adaptive {
                c.samples_per_epoch = n.clamp(c.bounds.samples.0, c.bounds.samples.1);
            }
            s.seeds = spec.seeds.iter().map(|&seed| sweep_seed(seed, n)).collect();
            let report = run_experiment(&s)?;
            Ok(SweepPoint { samples_per_epoch: n, accuracy: report.confusion().accuracy() })
        })
        .collect()
}
