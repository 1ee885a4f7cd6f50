use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use frontdoor::{MonteCarloConfig, ScenarioSpec};

fn frontdoor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frontdoor")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn simulate_to(dir: &Path, n: usize) -> std::path::PathBuf {
    let file = dir.join("data.csv");
    let n = n.to_string();
    let out = frontdoor(&["simulate", "--dgp", "builtin:paper", "--n", &n, "--seed", "5", "--out", path(&file)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    file
}

fn spec_to(dir: &Path) -> std::path::PathBuf {
    let file = dir.join("spec.json");
    fs::write(&file, ScenarioSpec::builtin("a").expect("builtin").spec.to_json()).expect("write spec");
    file
}

#[test]
fn oracle_exact_reports_zero_difference() {
    let out = frontdoor(&["oracle", "--dgp", "builtin:toy-v1", "--regime", "1,1", "--mode", "exact"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let value = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}=")))
            .unwrap_or_else(|| panic!("missing {key} in {text}"))
            .parse()
            .expect("number")
    };
    assert!((value("f_functional") - value("counterfactual_mean")).abs() <= 1e-10);
    assert!(value("difference").abs() <= 1e-10);
}

#[test]
fn simulate_to_stdout_writes_header_and_rows() {
    let out = frontdoor(&["simulate", "--dgp", "builtin:paper", "--n", "3", "--seed", "1", "--out", "-"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).lines().count(), 4);
}

#[test]
fn simulate_is_reproducible() {
    let run = || stdout(&frontdoor(&["simulate", "--dgp", "builtin:paper", "--n", "50", "--seed", "9", "--out", "-"]));
    assert_eq!(run(), run());
}

#[test]
fn estimate_writes_json_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_to(dir.path(), 400);
    let spec = spec_to(dir.path());
    let out = frontdoor(&[
        "estimate", "--data", path(&data), "--spec", path(&spec), "--estimator", "tmle", "--regime", "1,1", "--out", "-",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(stdout(&out).trim()).expect("json result");
    let psi = json["psi"].as_f64().expect("psi");
    assert!((0.0..=1.0).contains(&psi));
    let ci = json["ci"].as_array().expect("ci");
    assert!(ci[0].as_f64().unwrap() <= psi && psi <= ci[1].as_f64().unwrap());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("tmle psi="));
}

#[test]
fn estimate_rejects_regime_of_wrong_length() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_to(dir.path(), 50);
    let spec = spec_to(dir.path());
    let out = frontdoor(&[
        "estimate", "--data", path(&data), "--spec", path(&spec), "--estimator", "onestep", "--regime", "1,1,1",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn estimate_rejects_unknown_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_to(dir.path(), 50);
    let spec = spec_to(dir.path());
    let out = frontdoor(&[
        "estimate", "--data", path(&data), "--spec", path(&spec), "--estimator", "magic", "--regime", "1,1",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn malformed_csv_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "L1,L2,A0\n1,2\n").unwrap();
    let spec = spec_to(dir.path());
    let out = frontdoor(&[
        "estimate", "--data", path(&data), "--spec", path(&spec), "--estimator", "onestep", "--regime", "1,1",
    ]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(code(&frontdoor(&["simulate", "--bogus"])), 1);
    assert_eq!(code(&frontdoor(&["--help"])), 0);
}

#[test]
fn study_and_plot_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: MonteCarloConfig = MonteCarloConfig::from_json(
        r#"{"dgp":"builtin:paper","scenarios":["a"],"n":[200],"reps":3,
            "estimators":["ipw1","onestep","tmle"],"regimes":[[1,1]],"seed":11,"truth":{"11":0.45}}"#,
    )
    .expect("config");
    let config = dir.path().join("study.json");
    fs::write(&config, cfg.to_json()).unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = frontdoor(&["study", "--config", path(&config), "--out", path(&out_dir), "--jobs", "1"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let (first, second) = (run("one"), run("two"));
    for file in ["metrics.csv", "bias.svg", "sd.svg", "coverage.svg"] {
        assert_eq!(fs::read(first.join(file)).unwrap(), fs::read(second.join(file)).unwrap(), "{file}");
    }
    let replot = dir.path().join("replot");
    let out = frontdoor(&["plot", "--in", path(&first.join("metrics.csv")), "--out", path(&replot)]);
    assert_eq!(code(&out), 0);
    for file in ["bias.svg", "sd.svg", "coverage.svg"] {
        assert_eq!(fs::read(first.join(file)).unwrap(), fs::read(replot.join(file)).unwrap(), "{file}");
    }
    let csv = frontdoor(&["study", "--config", path(&config), "--out", "-"]);
    assert_eq!(csv.stdout, fs::read(first.join("metrics.csv")).unwrap());
}

#[test]
fn plot_refuses_stdout() {
    let out = frontdoor(&["plot", "--in", "metrics.csv", "--out", "-"]);
    assert_eq!(code(&out), 1);
}
