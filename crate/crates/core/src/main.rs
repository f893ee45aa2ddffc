use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fairbroker::harness::{
    emit_reports, evaluate_broker, replay, run_experiment, sweep_cost_accuracy, AdaptiveSetting, ExperimentConfig,
    ExperimentSpec, HarnessError, Manifest, ManifestCommand,
};
use fairbroker::verifier::{write_audit, Verifier};
use fairbroker::SimulatedBroker;

#[derive(Parser)]
#[command(name = "fairbroker", version, about = "Black-box fairness verification for cloud brokers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a single broker and print its verdict per seed.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Index of the broker in the config.
        #[arg(long, default_value_t = 0)]
        broker: usize,
    },
    /// Evaluate every broker and write results.csv and confusion.csv.
    Experiment {
        #[command(flatten)]
        common: Common,
    },
    /// Accuracy against per-epoch sample budget; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "5,10,25,50,100,200")]
        sizes: Vec<u32>,
    },
    /// Re-run a manifest.toml and rewrite its outputs.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults to the 30-broker population.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Samples per epoch.
    #[arg(long)]
    samples: Option<u32>,
    #[arg(long)]
    verdict_point: Option<f64>,
    #[arg(long, value_enum)]
    adaptive: Option<AdaptiveSetting>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if !self.seed.is_empty() {
            cfg.seeds = self.seed.clone();
        }
        if let Some(n) = self.samples {
            cfg.verifier.samples_per_epoch = n;
            if let Some(c) = &mut cfg.adaptive {
                c.samples_per_epoch = n;
            }
        }
        if let Some(v) = self.verdict_point {
            cfg.verdict_point = v;
        }
        if let Some(a) = self.adaptive {
            cfg.adaptive = a.controller(cfg.adaptive.take());
            if let (Some(c), Some(n)) = (&mut cfg.adaptive, self.samples) {
                c.samples_per_epoch = n;
            }
        }
        cfg.resolve()
    }
}

fn verify(spec: &ExperimentSpec, broker: usize, out: Option<&Path>) -> Result<(), HarnessError> {
    if broker >= spec.brokers.len() {
        return Err(HarnessError::Config(format!(
            "broker index {broker} out of range (config has {})",
            spec.brokers.len()
        )));
    }
    for &seed in &spec.seeds {
        let e = evaluate_broker(spec, broker, seed, &spec.verifier)?;
        let t = e.verdict.triple;
        println!(
            "seed={seed} decision={} fq={:.6} uq={:.6} phi={:.4} mu={:.4} tau={:.4} trace={:?} samples={}",
            if e.verdict.decision { "fair" } else { "unfair" },
            e.verdict.fq,
            e.verdict.uq,
            t.phi,
            t.mu,
            t.tau,
            e.verdict.trace_class,
            e.samples
        );
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let seed = spec.seeds[0];
        let mut b = SimulatedBroker::new(spec.brokers[broker].policy.clone(), spec.suppliers.build()?, spec.verifier.max_x)?;
        let mut v = Verifier::new(spec.verifier.clone())?.with_audit();
        let mut rng = fairbroker::harness::cell_rng(seed, broker);
        for _ in 0..spec.warmup_epochs {
            v.run_epoch(&mut b, &mut rng)?;
        }
        v.begin_epoch(&mut b);
        v.run_until(&mut b, &mut rng, spec.verdict_samples(spec.verifier.samples_per_epoch))?;
        let path = dir.join("audit.csv");
        let file = fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
        write_audit(std::io::BufWriter::new(file), v.audit()).map_err(|e| HarnessError::io(&path, e))?;
        println!("audit log: {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Verify { common, broker } => verify(&common.spec()?, broker, common.out.as_deref()),
        Command::Experiment { common } => {
            let spec = common.spec()?;
            let report = run_experiment(&spec)?;
            let m = report.confusion();
            println!("{}", m.csv().trim_end());
            println!("accuracy={:.4} errors={}", m.accuracy(), m.errors());
            if let Some(out) = &common.out {
                let manifest = Manifest::new(ManifestCommand::Experiment, spec);
                for p in emit_reports(out, &manifest, Some(&report), None)? {
                    println!("wrote {}", p.display());
                }
            }
            Ok(())
        }
        Command::Sweep { common, sizes } => {
            let spec = common.spec()?;
            let points = sweep_cost_accuracy(&spec, &sizes)?;
            for p in &points {
                println!("samples_per_epoch={} accuracy={:.4}", p.samples_per_epoch, p.accuracy);
            }
            if let Some(out) = &common.out {
                let manifest = Manifest::new(ManifestCommand::Sweep { sizes }, spec);
                for p in emit_reports(out, &manifest, None, Some(&points))? {
                    println!("wrote {}", p.display());
                }
            }
            Ok(())
        }
        Command::Replay { manifest, out } => {
            for p in replay(&Manifest::load(&manifest)?, &out)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
