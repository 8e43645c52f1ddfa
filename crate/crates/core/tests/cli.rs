//! Command-line behaviour: exit codes and written artifacts.

use std::path::Path;
use std::process::{Command, Output};

use uavchan::simctl::ExperimentConfig;

fn uavchan(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_uavchan"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> std::path::PathBuf {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn config_prints_parseable_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = uavchan(&["config"], None, dir.path());
    assert!(out.status.success());
    let printed = String::from_utf8(out.stdout).unwrap();
    let parsed = ExperimentConfig::from_toml(&printed).unwrap();
    assert_eq!(parsed.radio.tx_antennas, 256);
    assert_eq!(parsed.output_dir, dir.path().display().to_string());
}

#[test]
fn form_writes_ring_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = uavchan(&["form", "--seed", "3"], None, &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["scene.txt", "dataset_0.bin", "dataset_3.csv", "link_budget.csv", "formation.csv", "graph.txt", "manifest.txt"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let manifest = std::fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed.master = 3"));
    assert!(manifest.contains("file = graph.txt sha256="));
    assert!(!out_dir.join("training_history.csv").exists());
}

#[test]
fn infeasible_formation_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.radio.max_power_dbm = -80.0;
    let path = write_config(dir.path(), &cfg);
    let out_dir = dir.path().join("out");
    let out = uavchan(&["run"], Some(&path), &out_dir);
    assert_eq!(out.status.code(), Some(2));
    let manifest = std::fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("status = infeasible"));
    assert!(std::fs::read_to_string(out_dir.join("formation.csv")).unwrap().contains("infeasible"));
    assert!(!out_dir.join("training_history.csv").exists());
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "uavs = 4\nunknown_key = 1\n").unwrap();
    let out = uavchan(&["scene"], Some(&path), dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_key"));
}

#[test]
fn eta_sweep_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = uavchan(&["sweep", "--axis", "eta", "--values", "0.6,1.0,1.4"], None, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(dir.path().join("sweep_eta_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(dir.path().join("sweep_eta.csv").exists());
}
