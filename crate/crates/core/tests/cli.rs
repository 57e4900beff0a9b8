use std::fs;
use std::process::{Command, Output};

use cfisac::harness::{csv_header, CampaignSpec};

fn cfisac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfisac")).args(args).output().expect("binary runs")
}

const SMALL: &str = r#"
[network]
M = 6
N = 8
K = 2
L = 1
kappa_db = 4.0

[campaign]
schemes = ["GAP-OPA", "RAP-OPA"]
realizations = 2
"#;

#[test]
fn missing_campaign_file_is_a_config_error() {
    let out = cfisac(&["campaign", "missing.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("file not found"));
}

#[test]
fn unknown_flag_prints_usage() {
    let out = cfisac(&["simulate", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[network]\nM = 0\n").unwrap();
    let out = cfisac(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic() {
    let a = cfisac(&["simulate", "--seed", "7"]);
    let b = cfisac(&["simulate", "--seed", "7"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("scheme JAP-OPA\nseed 7\n"));
    assert!(text.contains("sensing_success"));
}

#[test]
fn quick_verify_passes() {
    let out = cfisac(&["verify", "--quick"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 6);
}

#[test]
fn campaign_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out_dir = dir.path().join("out");
    let out = cfisac(&["campaign", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), csv_header(2).join(","));
    assert_eq!(lines.count(), 4);

    // The metadata echoes a loadable campaign.
    let meta = fs::read_to_string(out_dir.join("metadata.toml")).unwrap();
    let spec = CampaignSpec::from_toml_str(&meta).unwrap_or_else(|e| panic!("{e}\n{meta}"));
    assert_eq!(spec.network.m, 6);
    assert_eq!(spec.seed, Some(3));
    assert!(out_dir.join("traces.csv").exists());
}

#[test]
fn asymptotic_quick_runs() {
    let out = cfisac(&["asymptotic", "--case", "II", "--quick", "--sizes", "8,16"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(cfisac(&["asymptotic", "--case", "III"]).status.code() == Some(1));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let spec = CampaignSpec::from_toml_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        for v in spec.points() {
            spec.point_config(v).unwrap();
        }
        seen += 1;
    }
    assert!(seen >= 3);
}
