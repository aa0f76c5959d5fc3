use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn smoke_config() -> PathBuf {
    root().join("configs/smoke.json")
}

fn data_dir() -> PathBuf {
    std::env::var_os("OTADP_DATA_DIR").map_or_else(|| root().join("data/mnist-desk"), PathBuf::from)
}

fn otadp(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_otadp"));
    cmd.args(args).env_remove("OTADP_OUTPUT_DIR").env_remove("OTADP_DATA_DIR");
    cmd
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn smoke_run(out: &Path, extra: &[&str]) -> Output {
    let cfg = smoke_config();
    let data = data_dir();
    let mut args = vec![
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run_ok(&mut otadp(&args))
}

#[test]
fn validate_config_accepts_the_shipped_configs() {
    for name in ["reference.json", "smoke.json"] {
        let path = root().join("configs").join(name);
        let out = run_ok(&mut otadp(&["validate-config", "--config", path.to_str().unwrap()]));
        assert!(String::from_utf8_lossy(&out.stdout).contains("config ok"));
    }
}

#[test]
fn invalid_config_exits_with_two_and_lists_every_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(smoke_config()).unwrap();
    let mut json: Value = serde_json::from_str(&text).unwrap();
    json["system"]["epsilon"] = Value::from(-1.0);
    json["system"]["delta"] = Value::from(1.5);
    let path = dir.path().join("bad.json");
    fs::write(&path, json.to_string()).unwrap();
    let out = otadp(&["validate-config", "--config", path.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("epsilon") && err.contains("delta"), "{err}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = otadp(&["run", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn privacy_free_verification_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let data = data_dir();
    let out = otadp(&[
        "verify-privacy",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--mode",
        "no_privacy",
        "--pairs",
        "2",
        "--samples",
        "10000",
    ])
    .output()
    .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("privacy_report.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "infeasible");
}

#[test]
fn private_verification_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let data = data_dir();
    run_ok(&mut otadp(&[
        "verify-privacy",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--pairs",
        "3",
        "--samples",
        "10000",
    ]));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("privacy_report.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "satisfied");
    assert_eq!(report["pairs"].as_array().unwrap().len(), 3);
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["", "cells", "plans"] {
        for entry in fs::read_dir(dir.join(sub)).unwrap() {
            let path = entry.unwrap().path();
            if path.is_file() {
                out.insert(format!("{sub}/{}", path.file_name().unwrap().to_string_lossy()), fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    smoke_run(a.path(), &["--trials", "1", "--jobs", "1"]);
    smoke_run(b.path(), &["--trials", "1", "--jobs", "3"]);
    let (fa, fb) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{name} differs");
    }
    // six comparison cells, one trial each
    assert_eq!(fa.keys().filter(|k| k.starts_with("cells/")).count(), 6);
}

#[derive(serde::Deserialize)]
struct Row {
    trial: usize,
    round: usize,
    kappa: f64,
    mode: String,
    accuracy: f64,
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn summary_is_recomputable_from_metrics() {
    let dir = tempfile::tempdir().unwrap();
    smoke_run(dir.path(), &["--trials", "3", "--kappas", "0,0.1", "--modes", "dp_aware,no_privacy"]);
    let mut groups: BTreeMap<(String, u64, usize), Vec<(usize, f64)>> = BTreeMap::new();
    let mut reader = csv::Reader::from_path(dir.path().join("metrics.csv")).unwrap();
    for row in reader.deserialize::<Row>() {
        let r = row.unwrap();
        groups.entry((r.mode, r.kappa.to_bits(), r.round)).or_default().push((r.trial, r.accuracy));
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let series = summary["series"].as_array().unwrap();
    assert_eq!(series.len(), 4);
    let rounds = summary["num_rounds"].as_u64().unwrap() as usize;
    let mut checked = 0;
    for s in series {
        let mode = s["mode"].as_str().unwrap().to_string();
        let kappa = s["kappa"].as_f64().unwrap();
        let rows = s["rounds"].as_array().unwrap();
        assert_eq!(rows.len(), rounds);
        for r in rows {
            let round = r["round"].as_u64().unwrap() as usize;
            let accs = &groups[&(mode.clone(), kappa.to_bits(), round)];
            assert_eq!(accs.len(), 3);
            let values: Vec<f64> = accs.iter().map(|a| a.1).collect();
            let (m, se) = mean_stderr(&values);
            assert!((r["mean_acc"].as_f64().unwrap() - m).abs() < 1e-12);
            assert!((r["stderr_acc"].as_f64().unwrap() - se).abs() < 1e-12);
            checked += 1;
        }
    }
    assert_eq!(checked, 4 * rounds);
}

fn plan_powers(path: &Path) -> Vec<String> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "power_mw").unwrap();
    reader.records().map(|r| r.unwrap()[col].to_string()).collect()
}

#[test]
fn unaware_plan_uses_ideal_hardware_powers() {
    let dir = tempfile::tempdir().unwrap();
    smoke_run(dir.path(), &["--trials", "1", "--kappas", "0,0.1", "--modes", "dp_aware,dp_unaware"]);
    let plans = dir.path().join("plans");
    let ideal = plan_powers(&plans.join("dp_aware_kappa0_trial0.csv"));
    let unaware = plan_powers(&plans.join("dp_unaware_kappa0.1_trial0.csv"));
    let aware = plan_powers(&plans.join("dp_aware_kappa0.1_trial0.csv"));
    assert_eq!(ideal, unaware);
    assert_ne!(aware, unaware);
}

#[test]
fn plot_data_follows_the_output_directory_variable() {
    let dir = tempfile::tempdir().unwrap();
    smoke_run(dir.path(), &["--trials", "2", "--kappas", "0.01", "--modes", "dp_aware"]);
    let cfg = smoke_config();
    run_ok(otadp(&["plot-data", "--config", cfg.to_str().unwrap()]).env("OTADP_OUTPUT_DIR", dir.path()));
    let text = fs::read_to_string(dir.path().join("plot_data.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("series,round,mean_acc,stderr"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn plot_data_without_metrics_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = otadp(&["plot-data", "--metrics", dir.path().to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("plot_data.csv").exists());
}

#[test]
fn data_directory_variable_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let out = otadp(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--trials", "1"])
        .env("OTADP_DATA_DIR", dir.path().join("missing"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));
}
