use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fleetgame_cli::error::CliError;
use fleetgame_core::network::generate_synthetic;
use fleetgame_core::Error;
use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> String {
    format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn fleetgame(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fleetgame")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = fleetgame(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_report(out: &Output) -> Value {
    let line = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(line.trim()).unwrap_or_else(|e| panic!("{e}: {line}"))
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

fn csv_header(path: &Path) -> Vec<String> {
    csv::Reader::from_path(path).unwrap().headers().unwrap().iter().map(String::from).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic scenario written to `dir`; zone 0 gets no demand.
fn small_scenario(dir: &Path, zones: usize, taxis: u32, quiet_zone: bool) -> PathBuf {
    let mut sc = generate_synthetic(zones, taxis, 3, 1.0).unwrap();
    if quiet_zone {
        sc.mu[0] = 0.0;
    }
    let path = dir.join("scenario.json");
    fs::write(&path, sc.to_json()).unwrap();
    path
}

#[test]
fn synth_matches_generator_and_writes_manifest() {
    let dir = TempDir::new().unwrap();
    let stdout = ok(&["synth", "--zones", "6", "--taxis", "40", "--seed", "11", "--out-dir", s(dir.path())]);
    assert!(stdout.contains("6 zones"));
    let text = fs::read_to_string(dir.path().join("scenario.json")).unwrap();
    let want = generate_synthetic(6, 40, 11, 1.0).unwrap().to_json();
    assert_eq!(text.trim_end(), want);

    let m: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "synth");
    assert_eq!(m["seed"], 11);
    assert_eq!(m["config"]["zones"], 6);
    assert_eq!(m["config"]["intensity"], 1.0);
    assert_eq!(m["artifacts"].as_array().unwrap().len(), 1);
    assert!(m["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn solve_ctmc_one_zone() {
    let dir = TempDir::new().unwrap();
    let stdout = ok(&["solve-ctmc", "--scenario", &fixture("one_zone.json"), "--out-dir", s(dir.path())]);
    assert!(stdout.contains("efficiency 0.666667"), "{stdout}");
    let r: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("ctmc.json")).unwrap()).unwrap();
    assert!((r["efficiency"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    let total: f64 = r["theta"].as_array().unwrap().iter().map(|t| t["probability"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn solve_policy_reports_small_regret() {
    let dir = TempDir::new().unwrap();
    let sc = small_scenario(dir.path(), 3, 2, false);
    let out = dir.path().join("out");
    ok(&["solve-policy", "--scenario", s(&sc), "--mode", "nash", "--horizon", "3", "--out-dir", s(&out)]);
    let r: Value = serde_json::from_str(&fs::read_to_string(out.join("regret.json")).unwrap()).unwrap();
    assert!(r["max_regret"].as_f64().unwrap() <= 1e-3, "{r}");
    assert_eq!(r["per_agent"].as_array().unwrap().len(), 2);
    assert!(out.join("policy.json").exists());
}

#[test]
fn solve_policy_online_skips_regret() {
    let dir = TempDir::new().unwrap();
    let sc = small_scenario(dir.path(), 4, 30, false);
    ok(&["solve-policy", "--scenario", s(&sc), "--mode", "opt", "--horizon", "2", "--budget", "10", "--out-dir", s(dir.path())]);
    let r: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("regret.json")).unwrap()).unwrap();
    assert!(r["skipped"].is_string());
    assert!(r.get("max_regret").is_none());
}

#[test]
fn exact_only_over_budget_fails() {
    let dir = TempDir::new().unwrap();
    let sc = small_scenario(dir.path(), 4, 30, false);
    let out_dir = dir.path().join("out");
    let out = fleetgame(&[
        "solve-policy", "--scenario", s(&sc), "--mode", "nash", "--horizon", "2", "--budget", "10", "--exact-only",
        "--out-dir", s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_report(&out)["error"], "state_space_too_large");
    assert!(!out_dir.exists());
}

#[test]
fn simulate_greedy_series() {
    let dir = TempDir::new().unwrap();
    let sc = small_scenario(dir.path(), 4, 12, true);
    let out = dir.path().join("out");
    ok(&[
        "simulate", "--scenario", s(&sc), "--policy", "greedy", "--horizon", "180", "--reps", "3", "--seed", "5",
        "--events", "--out-dir", s(&out),
    ]);

    let metrics = csv_rows(&out.join("metrics.csv"));
    assert_eq!(metrics.len(), 3);
    let h = csv_header(&out.join("metrics.csv"));
    let idx = |name: &str| h.iter().position(|c| c == name).unwrap();
    for r in &metrics {
        let total: f64 = ["cruising_minutes", "occupied_minutes", "rest_minutes"]
            .iter()
            .map(|c| r[idx(c)].parse::<f64>().unwrap())
            .sum();
        assert!((total - 12.0 * 180.0).abs() < 1e-6);
    }

    assert_eq!(csv_header(&out.join("cruising.csv")), ["period", "policy", "mean_cruising_hours", "stderr"]);
    let cruising = csv_rows(&out.join("cruising.csv"));
    let mut keys: Vec<(String, String)> = cruising.iter().map(|r| (r[0].to_string(), r[1].to_string())).collect();
    let n = keys.len();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), n, "one row per (period, policy)");
    assert!(cruising.iter().all(|r| &r[1] == "greedy"));

    assert_eq!(csv_header(&out.join("zone_series.csv")), ["zone", "interval", "trips", "cruising_taxis", "policy"]);
    let zones = csv_rows(&out.join("zone_series.csv"));
    let z0 = generate_synthetic(4, 12, 3, 1.0).unwrap().graph.zones()[0].clone();
    let quiet: Vec<_> = zones.iter().filter(|r| r[0] == z0).collect();
    assert!(!quiet.is_empty());
    assert!(quiet.iter().all(|r| r[2].parse::<f64>().unwrap() == 0.0));
    assert!(zones.iter().any(|r| r[2].parse::<f64>().unwrap() > 0.0));

    assert!(!csv_rows(&out.join("events.csv")).is_empty());
}

#[test]
fn simulate_policy_file() {
    let dir = TempDir::new().unwrap();
    let sc = small_scenario(dir.path(), 3, 2, false);
    let pol = dir.path().join("pol");
    ok(&["solve-policy", "--scenario", s(&sc), "--mode", "opt", "--horizon", "2", "--out-dir", s(&pol)]);
    let out = dir.path().join("sim");
    let policy = pol.join("policy.json");
    ok(&["simulate", "--scenario", s(&sc), "--policy", s(&policy), "--horizon", "60", "--out-dir", s(&out)]);
    let metrics = csv_rows(&out.join("metrics.csv"));
    assert_eq!(metrics.len(), 1);
    assert_eq!(&metrics[0][0], "opt");
    assert!(!out.join("events.csv").exists());
}

#[test]
fn compare_and_replay() {
    let dir = TempDir::new().unwrap();
    let sc = small_scenario(dir.path(), 2, 3, false);
    let out = dir.path().join("cmp");
    let stdout = ok(&[
        "compare", "--scenario", s(&sc), "--horizon", "120", "--reps", "2", "--seed", "4", "--out-dir", s(&out),
    ]);
    assert!(stdout.contains("greedy") && stdout.contains("nash") && stdout.contains("opt"));
    assert_eq!(csv_rows(&out.join("summary.csv")).len(), 9);
    assert_eq!(csv_rows(&out.join("paired.csv")).len(), 9);
    assert_eq!(csv_rows(&out.join("metrics.csv")).len(), 6);
    let policies: std::collections::BTreeSet<String> =
        csv_rows(&out.join("cruising.csv")).iter().map(|r| r[1].to_string()).collect();
    assert_eq!(policies.len(), 3);

    let again = dir.path().join("again");
    ok(&["replay", "--manifest", s(&out.join("manifest.json")), "--out-dir", s(&again)]);
    for name in ["summary.csv", "paired.csv", "metrics.csv", "cruising.csv", "zone_series.csv"] {
        assert_eq!(fs::read(out.join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn invalid_gamma_rejected_without_artifacts() {
    let dir = TempDir::new().unwrap();
    let mut v: Value = serde_json::from_str(&fs::read_to_string(fixture("one_zone.json")).unwrap()).unwrap();
    v["gamma"] = serde_json::json!([[0.5]]);
    let sc = dir.path().join("bad.json");
    fs::write(&sc, v.to_string()).unwrap();
    let out_dir = dir.path().join("out");
    let out = fleetgame(&["solve-ctmc", "--scenario", s(&sc), "--out-dir", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    let r = error_report(&out);
    assert_eq!(r["error"], "validation");
    assert!(r["pointer"].as_str().unwrap().starts_with("/gamma"), "{r}");
    assert!(!out_dir.exists());
}

#[test]
fn missing_file_is_io_error() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let missing = dir.path().join("nope.json");
    let out = fleetgame(&["simulate", "--scenario", s(&missing), "--policy", "greedy", "--out-dir", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_report(&out)["error"], "io");
    assert!(!out_dir.exists());
}

#[test]
fn usage_errors() {
    let out = fleetgame(&["synth", "--zones", "three"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_report(&out)["error"], "usage");

    let dir = TempDir::new().unwrap();
    let sc = small_scenario(dir.path(), 3, 2, false);
    let out = fleetgame(&["compare", "--scenario", s(&sc), "--width", "0", "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_report(&out)["error"], "invalid_argument");

    assert!(fleetgame(&["--help"]).status.success());
}

#[test]
fn exit_codes() {
    let nc = CliError::Core(Error::NonConvergence { iterations: 10, regret: 1.0 });
    assert_eq!(nc.exit_code(), 2);
    assert_eq!(nc.report().error, "non_convergence");
    assert_eq!(CliError::Core(Error::SingularSystem("x".into())).exit_code(), 2);
    assert_eq!(CliError::Invalid("x".into()).exit_code(), 1);
}

#[test]
fn emit_series_one_row_per_period_and_policy() {
    use fleetgame_cli::series::{emit_series, SeriesKind};
    use fleetgame_core::simulator::{greedy_baseline, simulate, SimConfig, SERIES_INTERVAL};

    let sc = generate_synthetic(3, 6, 2, 1.0).unwrap();
    let cfg = SimConfig {
        policy: greedy_baseline(&sc),
        scenario: sc.clone(),
        horizon: 4 * SERIES_INTERVAL,
        seed: 1,
        replications: 2,
        event_log: false,
    };
    let runs = simulate(&cfg).unwrap();
    let by_policy = vec![("a".to_string(), runs.clone()), ("b".to_string(), runs)];
    let zones = sc.graph.zones();

    let cruising = emit_series(&by_policy, SeriesKind::Cruising, zones);
    let mut r = csv::Reader::from_reader(cruising.as_slice());
    assert_eq!(r.records().count(), 2 * 4);

    let series = emit_series(&by_policy, SeriesKind::ZoneSeries, zones);
    let mut r = csv::Reader::from_reader(series.as_slice());
    assert_eq!(r.records().count(), 2 * 4 * 3);
}
