use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adaptive_mpc_cli::{run, validate_scenario, ControllerChoice, RunConfig, Scenario};

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"))
}

fn ampc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ampc"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

/// Shipped desk scenario with `edit` applied, written to `dir`.
fn edited(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(shipped("desk")).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join("edited.json");
    std::fs::write(&path, v.to_string()).unwrap();
    path
}

#[test]
fn short_adaptive_run_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = ampc(&[
        "run",
        "--scenario",
        shipped("desk").to_str().unwrap(),
        "--controller",
        "adaptive",
        "--steps",
        "50",
        "--out",
        out,
        "--audit",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("desk_adaptive.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    let audit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("desk_adaptive_audit.json")).unwrap()).unwrap();
    assert_eq!(audit["steps_completed"], 50);
    assert_eq!(audit["output_violation_steps"], 0);
    assert_eq!(audit["adaptive"]["membership_violations"], 0);
}

#[test]
fn library_run_reports_both_controllers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        scenario: shipped("desk"),
        controller: ControllerChoice::Both,
        steps: Some(30),
        out_dir: dir.path().to_path_buf(),
        seed: Some(3),
        audit: true,
        audit_stride: 10,
    };
    let (reports, code) = run(&cfg).unwrap();
    assert_eq!(code, 0);
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|r| r.steps_completed == 30 && r.seed == 3));
    assert!(reports[1].baseline.as_ref().is_some_and(|b| b.fallbacks == 0));
}

#[test]
fn csv_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (sub, seed) in [("a", "9"), ("b", "9"), ("c", "10")] {
        let out = dir.path().join(sub);
        let o = ampc(&[
            "run",
            "--scenario",
            shipped("desk").to_str().unwrap(),
            "--controller",
            "adaptive",
            "--steps",
            "25",
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        outputs.push(std::fs::read(out.join("desk_adaptive.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_ne!(outputs[0], outputs[2]);
}

#[test]
fn missing_scenario_is_an_error() {
    let o = ampc(&["run", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/scenario.json"));
}

#[test]
fn too_many_steps_is_an_error() {
    let o = ampc(&["run", "--scenario", shipped("desk").to_str().unwrap(), "--steps", "100000"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("valve schedule"));
}

#[test]
fn shipped_scenarios_validate() {
    for name in ["desk", "fullscale"] {
        let o = ampc(&["validate", "--scenario", shipped(name).to_str().unwrap()]);
        assert!(o.status.success(), "{name}");
        let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(report["passed"], true);
        assert!(report["min_prior_margin"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn shrunken_prior_fails_validation_at_the_first_step() {
    let dir = tempfile::tempdir().unwrap();
    let path = edited(dir.path(), |v| v["uncertainty"]["prior_scale"] = 0.1.into());
    let report = validate_scenario(&Scenario::load(&path).unwrap()).unwrap();
    assert!(!report.passed);
    let (step, why) = report.first_failure.unwrap();
    assert_eq!(step, 0);
    assert!(why.contains("prior"));
    assert_eq!(ampc(&["validate", "--scenario", path.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn run_longer_than_the_schedule_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = edited(dir.path(), |v| v["steps"] = 5000.into());
    let report = validate_scenario(&Scenario::load(&path).unwrap()).unwrap();
    assert!(!report.passed);
    assert!(report.first_failure.unwrap().1.contains("valve schedule"));
}

#[test]
fn empty_schedule_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = edited(dir.path(), |v| v["plant"]["schedule"] = serde_json::json!([]));
    assert!(Scenario::load(&path).is_err());
    let o = ampc(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn unknown_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = edited(dir.path(), |v| v["controller"]["horizn"] = 3.into());
    assert!(Scenario::load(&path).is_err());
}
