//! CSV reports, run manifests and replay.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{run_experiment, sweep_cost_accuracy, Evaluation, ExperimentReport, ExperimentSpec, HarnessError};

pub const RESULTS_HEADER: &str = "broker_id,ground_truth,samples,vms_provisioned,fq,decision";
pub const SWEEP_HEADER: &str = "samples_per_epoch,accuracy";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub broker_id: usize,
    pub ground_truth: super::GroundTruth,
    pub samples: u64,
    pub vms_provisioned: u64,
    pub fq: f64,
    pub decision: bool,
}

impl From<&Evaluation> for ReportRow {
    fn from(e: &Evaluation) -> Self {
        Self {
            broker_id: e.broker_id,
            ground_truth: e.ground_truth,
            samples: e.samples,
            vms_provisioned: e.vms_provisioned,
            fq: e.verdict.fq,
            decision: e.verdict.decision,
        }
    }
}

impl ReportRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{}",
            self.broker_id,
            self.ground_truth,
            self.samples,
            self.vms_provisioned,
            self.fq,
            if self.decision { "fair" } else { "unfair" }
        )
    }
}

/// Counts of (ground truth, decision) pairs. "Positive" means declared fair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub fair_declared_fair: u64,
    pub fair_declared_unfair: u64,
    pub unfair_declared_fair: u64,
    pub unfair_declared_unfair: u64,
}

impl ConfusionMatrix {
    pub fn from_evaluations(evals: &[Evaluation]) -> Self {
        let mut m = Self::default();
        for e in evals {
            match (e.ground_truth.is_fair(), e.verdict.decision) {
                (true, true) => m.fair_declared_fair += 1,
                (true, false) => m.fair_declared_unfair += 1,
                (false, true) => m.unfair_declared_fair += 1,
                (false, false) => m.unfair_declared_unfair += 1,
            }
        }
        m
    }

    /// Unfair brokers declared fair.
    pub fn false_positives(&self) -> u64 {
        self.unfair_declared_fair
    }

    /// Fair brokers declared unfair.
    pub fn false_negatives(&self) -> u64 {
        self.fair_declared_unfair
    }

    pub fn errors(&self) -> u64 {
        self.false_positives() + self.false_negatives()
    }

    pub fn total(&self) -> u64 {
        self.fair_declared_fair + self.fair_declared_unfair + self.unfair_declared_fair + self.unfair_declared_unfair
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => (n - self.errors()) as f64 / n as f64,
        }
    }

    pub fn csv(&self) -> String {
        format!(
            "ground_truth,declared_fair,declared_unfair\nfair,{},{}\nunfair,{},{}\n",
            self.fair_declared_fair, self.fair_declared_unfair, self.unfair_declared_fair, self.unfair_declared_unfair
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub samples_per_epoch: u32,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum ManifestCommand {
    Experiment,
    Sweep { sizes: Vec<u32> },
}

/// Everything needed to regenerate a report directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub run: ManifestCommand,
    pub spec: ExperimentSpec,
}

impl Manifest {
    pub fn new(run: ManifestCommand, spec: ExperimentSpec) -> Self {
        Self { version: env!("CARGO_PKG_VERSION").to_string(), run, spec }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

fn write(dir: &Path, name: &str, body: &str) -> Result<PathBuf, HarnessError> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

/// Write whichever reports are available plus the manifest. Returns the
/// written paths.
pub fn emit_reports(
    out: &Path,
    manifest: &Manifest,
    report: Option<&ExperimentReport>,
    sweep: Option<&[SweepPoint]>,
) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut written = Vec::new();
    if let Some(r) = report {
        let mut body = String::from(RESULTS_HEADER);
        body.push('\n');
        for row in r.rows() {
            body.push_str(&row.csv());
            body.push('\n');
        }
        written.push(write(out, "results.csv", &body)?);
        written.push(write(out, "confusion.csv", &r.confusion().csv())?);
    }
    if let Some(points) = sweep {
        let mut body = String::from(SWEEP_HEADER);
        body.push('\n');
        for p in points {
            let _ = writeln!(body, "{},{:.6}", p.samples_per_epoch, p.accuracy);
        }
        written.push(write(out, "sweep.csv", &body)?);
    }
    written.push(write(out, "manifest.toml", &manifest.to_toml()?)?);
    Ok(written)
}

/// Re-run a manifest into `out`.
pub fn replay(manifest: &Manifest, out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    match &manifest.run {
        ManifestCommand::Experiment => {
            let r = run_experiment(&manifest.spec)?;
            emit_reports(out, manifest, Some(&r), None)
        }
        ManifestCommand::Sweep { sizes } => {
            let points = sweep_cost_accuracy(&manifest.spec, sizes)?;
            emit_reports(out, manifest, None, Some(&points))
        }
    }
}
