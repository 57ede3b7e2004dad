use std::fs;
use std::process::Command;

use admm_nnmpc::cli::{exit, main_with_args};
use admm_nnmpc::sim::{ScenarioConfig, Summary};

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("admm-nnmpc").chain(list.iter().copied()).map(String::from).collect()
}

#[test]
fn usage_errors_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(main_with_args(args(&["run", "--config", "two_lane", "--planner", "mpc", "--out", out])), exit::CONFIG);
    assert_eq!(main_with_args(args(&["run", "--config", "nowhere.json", "--planner", "admm", "--out", out])), exit::CONFIG);
    assert_eq!(main_with_args(args(&["frobnicate"])), exit::CONFIG);
    assert_eq!(main_with_args(args(&["--help"])), exit::OK);
}

#[test]
fn malformed_config_file_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{\"name\": 3}").unwrap();
    let out = dir.path().join("out");
    let code = main_with_args(args(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--planner",
        "baseline",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, exit::CONFIG);
}

#[test]
fn failed_baseline_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let code = main_with_args(args(&["run", "--config", "two_lane", "--planner", "baseline", "--out", out.to_str().unwrap(), "--certify"]));
    assert_eq!(code, exit::FAILED);
    let summary: Summary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.planner, "baseline");
    assert!(summary.max_admm_iterations.is_none());
    let log = fs::read_to_string(out.join("simlog.csv")).unwrap();
    assert_eq!(log.lines().count(), summary.steps + 2);
    let cert: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("rho_certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["informational"], true);
    assert!(!out.join("admm_trace.csv").exists());
}

#[test]
fn config_file_path_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::builtin("three_lane").unwrap();
    cfg.max_sim_steps = 1;
    let path = dir.path().join("short.json");
    fs::write(&path, cfg.to_json().unwrap()).unwrap();
    let out = dir.path().join("out");
    let code = main_with_args(args(&["run", "--config", path.to_str().unwrap(), "--planner", "admm", "--out", out.to_str().unwrap(), "--trace"]));
    assert_eq!(code, exit::FAILED);
    let trace = fs::read_to_string(out.join("admm_trace.csv")).unwrap();
    assert!(trace.starts_with("schema_version,step,iteration,"));
    assert!(trace.lines().count() > 1);
}

#[test]
fn compare_writes_both_planners() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    assert_eq!(main_with_args(args(&["compare", "--config", "three_lane", "--out", out.to_str().unwrap()])), exit::OK);
    let cmp: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    let rows = cmp["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["outcome"]["kind"], "merged");
    assert!(out.join("admm/simlog.csv").exists() && out.join("baseline/simlog.csv").exists());
    let table = fs::read_to_string(out.join("comparison.txt")).unwrap();
    assert!(table.contains("admm") && table.contains("baseline"));
}

#[test]
fn certify_subcommand_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let read = |name: &str| {
        let out = dir.path().join(name);
        let code = main_with_args(args(&["certify", "--config", "two_lane", "--out", out.to_str().unwrap(), "--seed", "5", "--samples", "120"]));
        assert_eq!(code, exit::OK);
        fs::read_to_string(out.join("rho_certificate.json")).unwrap()
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn binary_reports_exit_codes() {
    let status = Command::new(env!("CARGO_BIN_EXE_admm-nnmpc")).args(["run", "--config", "missing"]).output().unwrap();
    assert_eq!(status.status.code(), Some(exit::CONFIG));
    let help = Command::new(env!("CARGO_BIN_EXE_admm-nnmpc")).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(exit::OK));
    assert!(String::from_utf8_lossy(&help.stdout).contains("compare"));
}

fn certificate(dir: &std::path::Path, cfg: &ScenarioConfig, seed: &str) -> serde_json::Value {
    let path = dir.join(format!("cfg_{seed}.json"));
    fs::write(&path, cfg.to_json().unwrap()).unwrap();
    let out = dir.join(format!("cert_{seed}"));
    let code = main_with_args(args(&["certify", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed, "--samples", "120"]));
    assert_eq!(code, exit::OK);
    serde_json::from_str(&fs::read_to_string(out.join("rho_certificate.json")).unwrap()).unwrap()
}

#[test]
fn single_step_horizon_has_unit_sigma_min() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::builtin("two_lane").unwrap();
    cfg.model.horizon = 1;
    cfg.weights.lambda_s.truncate(1);
    let cert = certificate(dir.path(), &cfg, "1");
    assert!((cert["sigma_min_c"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn certificate_is_stable_across_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig::builtin("two_lane").unwrap();
    let a = certificate(dir.path(), &cfg, "1");
    let b = certificate(dir.path(), &cfg, "2");
    let ratio = a["bound"].as_f64().unwrap() / b["bound"].as_f64().unwrap();
    assert!((0.5..=2.0).contains(&ratio), "{ratio}");
}

#[test]
fn admm_run_on_two_lane_merges() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(main_with_args(args(&["run", "--config", "two_lane", "--planner", "admm", "--out", out.to_str().unwrap()])), exit::OK);
    let summary: Summary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(matches!(summary.outcome, admm_nnmpc::sim::Outcome::Merged { .. }));
    assert_eq!(summary.fallback_steps, 0);
}
