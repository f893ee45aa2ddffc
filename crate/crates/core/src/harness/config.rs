//! Experiment configuration files.
//!
//! A config is TOML. Brokers are either listed explicitly under `[[brokers]]`
//! or generated from a `[population]` table; both may be combined, listed
//! brokers first. See `crates/core/configs/paper.toml` for a complete example.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::adaptive::{ControllerMode, ControllerState};
use crate::cloudsim::{BrokerPolicy, PolicyKind, SupplierTemplate, MAX_BIAS_RATE, MIN_BIAS_RATE};
use crate::verifier::VerifierConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruth {
    Fair,
    Unfair,
}

impl GroundTruth {
    pub fn of(policy: &BrokerPolicy) -> Self {
        match policy.kind {
            PolicyKind::EpochFair => GroundTruth::Fair,
            _ => GroundTruth::Unfair,
        }
    }

    pub fn is_fair(self) -> bool {
        self == GroundTruth::Fair
    }
}

impl fmt::Display for GroundTruth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.is_fair() { "fair" } else { "unfair" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrokerSpec {
    #[serde(flatten)]
    pub policy: BrokerPolicy,
    pub ground_truth: GroundTruth,
}

impl BrokerSpec {
    pub fn new(policy: BrokerPolicy) -> Self {
        let ground_truth = GroundTruth::of(&policy);
        Self { policy, ground_truth }
    }
}

/// `[[brokers]]` entry of a config file; the label defaults from the kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrokerEntry {
    #[serde(flatten)]
    pub policy: BrokerPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
}

/// Generated population of fair and biased brokers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub fair: usize,
    pub biased: usize,
    #[serde(default = "default_bias_min")]
    pub bias_min: f64,
    #[serde(default = "default_bias_max")]
    pub bias_max: f64,
    /// Inclusive range the fair brokers' `min_chunk` is drawn from.
    #[serde(default = "default_fair_chunk")]
    pub fair_min_chunk: (u32, u32),
    #[serde(default)]
    pub seed: u64,
}

fn default_bias_min() -> f64 {
    MIN_BIAS_RATE
}

fn default_bias_max() -> f64 {
    MAX_BIAS_RATE
}

fn default_fair_chunk() -> (u32, u32) {
    (1, 10)
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            fair: 15,
            biased: 15,
            bias_min: MIN_BIAS_RATE,
            bias_max: MAX_BIAS_RATE,
            fair_min_chunk: default_fair_chunk(),
            seed: 2018,
        }
    }
}

impl PopulationConfig {
    /// Fair brokers first, then biased ones, each biased broker favoring a
    /// random supplier at a rate drawn uniformly from the bias range.
    pub fn generate(&self, suppliers: usize) -> Result<Vec<BrokerSpec>, HarnessError> {
        if !(MIN_BIAS_RATE <= self.bias_min && self.bias_min <= self.bias_max && self.bias_max <= MAX_BIAS_RATE) {
            return Err(HarnessError::Config(format!(
                "bias range [{}, {}] must lie within [{MIN_BIAS_RATE}, {MAX_BIAS_RATE}]",
                self.bias_min, self.bias_max
            )));
        }
        let (lo, hi) = self.fair_min_chunk;
        if lo == 0 || lo > hi {
            return Err(HarnessError::Config(format!("fair_min_chunk range ({lo}, {hi}) is empty")));
        }
        if suppliers == 0 {
            return Err(HarnessError::Config("population needs suppliers".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.fair + self.biased);
        for _ in 0..self.fair {
            out.push(BrokerSpec::new(BrokerPolicy::epoch_fair_chunked(rng.gen_range(lo..=hi))));
        }
        for _ in 0..self.biased {
            let favored = rng.gen_range(0..suppliers);
            let rate = if self.bias_max > self.bias_min {
                rng.gen_range(self.bias_min..=self.bias_max)
            } else {
                self.bias_min
            };
            out.push(BrokerSpec::new(BrokerPolicy::biased(favored, rate)));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptiveSetting {
    Off,
    PaperIvc,
    PaperVb,
}

impl AdaptiveSetting {
    pub fn controller(self, base: Option<ControllerState>) -> Option<ControllerState> {
        let mode = match self {
            AdaptiveSetting::Off => return None,
            AdaptiveSetting::PaperIvc => ControllerMode::PaperIvc,
            AdaptiveSetting::PaperVb => ControllerMode::PaperVb,
        };
        Some(ControllerState { mode, ..base.unwrap_or_default() })
    }
}

/// On-disk experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_verdict_point")]
    pub verdict_point: f64,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: u32,
    #[serde(default)]
    pub suppliers: SupplierTemplate,
    #[serde(default)]
    pub verifier: VerifierConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptive: Option<ControllerState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<PopulationConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub brokers: Vec<BrokerEntry>,
}

pub fn default_seeds() -> Vec<u64> {
    (1..=20).collect()
}

fn default_verdict_point() -> f64 {
    0.5
}

fn default_warmup() -> u32 {
    1
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            verdict_point: default_verdict_point(),
            warmup_epochs: default_warmup(),
            suppliers: SupplierTemplate::default(),
            verifier: VerifierConfig::default(),
            adaptive: None,
            population: Some(PopulationConfig::default()),
            brokers: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Expand into a runnable spec. Validation happens here, before any run.
    pub fn resolve(&self) -> Result<super::ExperimentSpec, HarnessError> {
        let mut brokers: Vec<BrokerSpec> = self
            .brokers
            .iter()
            .map(|b| BrokerSpec {
                policy: b.policy.clone(),
                ground_truth: b.ground_truth.unwrap_or_else(|| GroundTruth::of(&b.policy)),
            })
            .collect();
        if let Some(p) = &self.population {
            brokers.extend(p.generate(self.suppliers.count)?);
        }
        let spec = super::ExperimentSpec {
            brokers,
            suppliers: self.suppliers.clone(),
            verifier: self.verifier.clone(),
            adaptive: self.adaptive.clone(),
            seeds: self.seeds.clone(),
            verdict_point: self.verdict_point,
            warmup_epochs: self.warmup_epochs,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_shape() {
        let p = PopulationConfig::default().generate(5).unwrap();
        assert_eq!(p.len(), 30);
        assert!(p[..15].iter().all(|b| b.ground_truth == GroundTruth::Fair));
        for b in &p[15..] {
            let r = b.policy.bias_rate.unwrap();
            assert!((0.25..=0.45).contains(&r));
            assert!(b.policy.favored_supplier.unwrap() < 5);
        }
    }

    #[test]
    fn bad_bias_range() {
        let p = PopulationConfig { bias_min: 0.1, ..PopulationConfig::default() };
        assert!(p.generate(5).is_err());
    }

    #[test]
    fn explicit_brokers_parse() {
        let cfg = ExperimentConfig::parse(
            r#"
            seeds = [7]
            [[brokers]]
            kind = "biased"
            favored_supplier = 1
            bias_rate = 0.3
            [[brokers]]
            kind = "epoch-fair"
            "#,
        )
        .unwrap();
        let spec = cfg.resolve().unwrap();
        assert_eq!(spec.brokers.len(), 2);
        assert_eq!(spec.brokers[0].ground_truth, GroundTruth::Unfair);
        assert_eq!(spec.brokers[1].policy.min_chunk, 1);
        assert_eq!(spec.verifier.samples_per_epoch, 50);
    }

    #[test]
    fn invalid_policy_rejected_before_run() {
        let cfg = ExperimentConfig::parse(
            r#"
            [[brokers]]
            kind = "biased"
            favored_supplier = 9
            bias_rate = 0.3
            "#,
        )
        .unwrap();
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn default_config_round_trips() {
        let mut cfg = ExperimentConfig {
            adaptive: AdaptiveSetting::PaperVb.controller(None),
            ..ExperimentConfig::default()
        };
        cfg.brokers.push(BrokerEntry { policy: BrokerPolicy::size_dependent(2, 0.4, 40), ground_truth: None });
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }
}
