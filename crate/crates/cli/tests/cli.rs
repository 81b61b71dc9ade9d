use std::path::Path;
use std::process::Command;

use nalgebra::{DMatrix, DVector};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_j2r"))
}

/// Hashed uniform noise on [-1, 1).
fn noise(i: usize, s: usize) -> f64 {
    let mut z = (i as u64) << 8 | s as u64;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9).wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Two visits, one covariate (plus a copy scaled by 2 when `collinear`).
fn write_trial(path: &Path, n: usize, missing: bool, collinear: bool) {
    let mut out = String::from(if collinear { "id,trt,x1,x2,y1,y2\n" } else { "id,trt,x1,y1,y2\n" });
    for i in 0..n {
        let a = i % 2;
        let x = ((i * 37) % 17) as f64 / 4.0 - 2.0;
        let y1 = 1.0 + 0.5 * x + 0.3 * a as f64 + noise(i, 1);
        let y2 = 0.2 + 0.8 * y1 + 0.4 * a as f64 + noise(i, 2);
        let y2 = if missing && i % 5 == 0 { String::new() } else { format!("{y2:?}") };
        if collinear {
            out += &format!("s{i},{a},{x:?},{:?},{y1:?},{y2}\n", 2.0 * x);
        } else {
            out += &format!("s{i},{a},{x:?},{y1:?},{y2}\n");
        }
    }
    std::fs::write(path, out).unwrap();
}

fn run(args: &[&str]) -> (i32, Value) {
    let out = bin().args(args).output().unwrap();
    let v: Value = serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("bad json ({e}): {}", String::from_utf8_lossy(&out.stdout))
    });
    (out.status.code().unwrap(), v)
}

#[test]
fn complete_data_least_squares_matches_direct_fit() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trial.csv");
    write_trial(&csv, 80, false, false);
    let (code, v) = run(&["analyze", "--input", csv.to_str().unwrap(), "--loss", "ls", "--form", "main"]);
    assert_eq!(code, 0, "{v}");
    let est = &v["estimate"];
    let tau = est["tau_hat"].as_f64().unwrap();

    // same regression of y2 on (trt, 1, x1) by hand
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|c| c.parse().unwrap()).collect())
        .collect();
    let x = DMatrix::from_fn(rows.len(), 3, |i, j| match j {
        0 => rows[i][0],
        1 => 1.0,
        _ => rows[i][1],
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r[3]));
    let coef = (x.transpose() * &x).lu().solve(&(x.transpose() * y)).unwrap();
    assert!((tau - coef[0]).abs() < 1e-10, "{tau} vs {}", coef[0]);

    let ci = est["ci95"].as_array().unwrap();
    assert!(ci.iter().all(|c| c.as_f64().unwrap().is_finite()));
    assert!(est["var_linearized"].as_f64().unwrap() > 0.0);
    assert_eq!(v["seed"], 7);
    assert!(v["version"].is_string());
    assert_eq!(v["args"]["loss"], "ls");
}

#[test]
fn rank_deficient_covariates_exit_with_rank_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trial.csv");
    write_trial(&csv, 60, true, true);
    let (code, v) = run(&["analyze", "--input", csv.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert_eq!(v["error"]["kind"], "RankError", "{v}");
}

#[test]
fn reports_are_reproducible_apart_from_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trial.csv");
    write_trial(&csv, 120, true, false);
    let mut reports = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("r{k}.json"));
        let status = bin()
            .args(["analyze", "--input", csv.to_str().unwrap(), "--variance", "both", "--bootstrap-b", "40"])
            .args(["--seed", "5", "--out", out.to_str().unwrap()])
            .status()
            .unwrap();
        assert!(status.success());
        let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert!(v["timestamp"].is_u64());
        v.as_object_mut().unwrap().remove("timestamp");
        reports.push(serde_json::to_string(&v).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn bad_nu_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trial.csv");
    write_trial(&csv, 40, false, false);
    let (code, v) = run(&["analyze", "--input", csv.to_str().unwrap(), "--nu", "ten"]);
    assert_eq!(code, 2);
    assert_eq!(v["error"]["kind"], "ConfigError");
}

#[test]
fn cross_validated_nu_runs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trial.csv");
    write_trial(&csv, 200, true, false);
    let (code, v) = run(&["analyze", "--input", csv.to_str().unwrap(), "--nu", "cv", "--cv-folds", "4"]);
    assert_eq!(code, 0, "{v}");
    let visits = v["estimate"]["diagnostics"]["imputation"].as_array().unwrap();
    assert_eq!(visits.len(), 2);
}

#[test]
fn simulate_writes_report_and_records() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("reps.csv");
    let (code, v) = run(&[
        "simulate", "--scenario", "h0-normal-clean", "--reps", "5", "--mi-m", "3", "--records",
        rec.to_str().unwrap(), "--threads", "2",
    ]);
    assert_eq!(code, 0, "{v}");
    let methods = v["report"]["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 3);
    assert!(methods.iter().all(|m| m["failures"] == 0));
    assert_eq!(std::fs::read_to_string(rec).unwrap().lines().count(), 1 + 15);
}

#[test]
fn reproduce_exit_code_follows_verdicts() {
    let (code, v) = run(&["reproduce", "S2", "--reps", "20", "--mi-m", "3"]);
    let report = &v["report"];
    let all_pass = report["all_pass"].as_bool().unwrap();
    assert_eq!(code, if all_pass { 0 } else { 1 });
    for c in report["comparisons"].as_array().unwrap() {
        assert!(c["reproduced"].is_number());
        assert!(c["tolerance"].is_string());
    }
}

#[test]
fn unknown_table_is_rejected() {
    let (code, v) = run(&["reproduce", "9z"]);
    assert_eq!(code, 2);
    assert_eq!(v["error"]["kind"], "ConfigError");
}
