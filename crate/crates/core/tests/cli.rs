use std::fs;
use std::process::{Command, Output};

fn fairbroker(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairbroker")).args(args).output().unwrap()
}

const ONE_BROKER: &str = r#"
seeds = [11, 12]

[[brokers]]
kind = "biased"
favored_supplier = 3
bias_rate = 0.4
"#;

#[test]
fn verify_prints_verdict_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broker.toml");
    fs::write(&cfg, ONE_BROKER).unwrap();
    let out = dir.path().join("out");
    let o = fairbroker(&["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("seed=")).count(), 2);
    assert!(text.contains("decision=unfair"));
    let audit = fs::read_to_string(out.join("audit.csv")).unwrap();
    assert!(audit.starts_with("kind,epoch,probe,time,size,color,apportionment,state,moved\n"));
}

#[test]
fn experiment_and_sweep_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let o = fairbroker(&["experiment", "--seed", "1", "--samples", "20", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(lines.next(), Some("broker_id,ground_truth,samples,vms_provisioned,fq,decision"));
    assert_eq!(lines.count(), 30);
    assert!(out.join("confusion.csv").exists());

    let out = dir.path().join("sweep");
    let o = fairbroker(&["sweep", "--seed", "1,2", "--sizes", "5,10", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(sweep.starts_with("samples_per_epoch,accuracy\n5,"));
    assert_eq!(sweep.lines().count(), 3);
}

#[test]
fn failures_exit_nonzero() {
    let o = fairbroker(&["experiment", "--config", "/nonexistent/cfg.toml"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/cfg.toml"));

    let o = fairbroker(&["experiment", "--verdict-point", "1.5"]);
    assert!(!o.status.success());

    let o = fairbroker(&["sweep", "--sizes", "10"]);
    assert!(!o.status.success());

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[[brokers]]\nkind = \"biased\"\nfavored_supplier = 0\nbias_rate = 0.9\n").unwrap();
    let o = fairbroker(&["verify", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn shipped_config_is_the_default() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/paper.toml");
    let cfg = fairbroker::harness::ExperimentConfig::load(std::path::Path::new(path)).unwrap();
    assert_eq!(cfg, fairbroker::harness::ExperimentConfig::default());
}
