//! End-to-end checks of the `dyadic` binary: exit codes, artifact layout,
//! config overrides, and byte-determinism of rerun CSVs.

use std::fs;
use std::path::Path;
use std::process::Command;

fn dyadic() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dyadic"))
}

fn run_in(dir: &Path, args: &[&str]) -> std::process::Output {
    dyadic()
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn help_and_usage_exit_codes() {
    let out = dyadic().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("usage: dyadic"));
    // No arguments is a usage error.
    let out = dyadic().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_scenario_is_a_validation_error() {
    let out = dyadic().arg("explode").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scenario"));
}

#[test]
fn bad_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "[model]\nbogus = 1\n").unwrap();
    let out = dyadic()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("bogus"), "{err}");
}

#[test]
fn simulate_produces_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "simulate",
            "--set",
            "shells=5",
            "--set",
            "t_end=0.2",
            "--seed",
            "7",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["states.csv", "diagnostics.csv", "plot.gp", "summary.json"] {
        let p = dir.path().join(f);
        assert!(p.exists(), "{f} missing");
        assert!(fs::metadata(&p).unwrap().len() > 0, "{f} empty");
    }
    let states = fs::read_to_string(dir.path().join("states.csv")).unwrap();
    assert!(states.starts_with("t,a_0,a_1,a_2,a_3,a_4,a_5\n"));
    let diag = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    assert!(diag.starts_with("t,E,sup_theta,"), "{}", &diag[..40]);
}

#[test]
fn reruns_are_byte_identical() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let args = ["simulate", "--set", "shells=4", "--set", "t_end=0.1", "--seed", "9"];
    assert_eq!(run_in(d1.path(), &args).status.code(), Some(0));
    assert_eq!(run_in(d2.path(), &args).status.code(), Some(0));
    for f in ["states.csv", "diagnostics.csv"] {
        assert_eq!(
            fs::read(d1.path().join(f)).unwrap(),
            fs::read(d2.path().join(f)).unwrap(),
            "{f} differs between reruns"
        );
    }
}

#[test]
fn certificate_report_is_archivable_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "certificate",
            "--set",
            "certificate.grid_points=256",
            "--set",
            "certificate.t_check=5",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    for key in [
        "delta_star",
        "b_at_delta_star",
        "b_limit",
        "beta_samples",
        "sup_beta",
        "tail_bound",
        "verdict",
        "tool_version",
        "params",
    ] {
        assert!(report.get(key).is_some(), "report.json missing {key}");
    }
    assert_eq!(report["params"]["k"], serde_json::json!(0.96));
}

#[test]
fn numerical_failure_exits_three_with_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    // A tiny step budget forces explicit budget-exhaustion reporting.
    let out = run_in(
        dir.path(),
        &[
            "simulate",
            "--set",
            "shells=6",
            "--set",
            "t_end=5",
            "--set",
            "integrator.max_steps=30",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("budget exhausted"), "{stdout}");
    assert!(dir.path().join("states.csv").exists());
}

#[test]
fn cli_scenario_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "scenario = decay\nshells = 4\nt_end = 0.1\n").unwrap();
    let out = dyadic()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["scenario"], "simulate");
}
