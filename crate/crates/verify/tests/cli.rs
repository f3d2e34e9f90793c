use std::path::PathBuf;
use std::process::Command;

use caxial_verify::{run_suite, Report, RunConfig, Status, Suite};

fn caxial() -> Command {
    Command::new(env!("CARGO_BIN_EXE_caxial"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("caxial-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn read_report(path: &PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn passing_run_exits_zero_and_writes_report() {
    let dir = scratch("pass");
    let report = dir.join("report.json");
    let out = caxial()
        .args(["verify", "--dim", "2", "--L", "3", "--levels", "1", "--suite", "calculus,averaging", "--quiet"])
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json = read_report(&report);
    assert_eq!(json["schema"], 1);
    let summary = &json["summary"];
    assert_eq!(summary["failed"], 0);
    assert!(summary["passed"].as_u64().unwrap() > 0);
    for c in json["checks"].as_array().unwrap() {
        assert_eq!(c["instance"], "d2L3N1");
        assert!(c["anchor"].as_str().is_some_and(|a| !a.is_empty()));
    }
}

#[test]
fn impossible_tolerance_exits_one() {
    let out = caxial()
        .args(["verify", "--dim", "2", "--L", "3", "--levels", "2", "--suite", "calculus", "--tol", "1e-300", "--filter", "gauge_invariance"])
        .output()
        .unwrap();
    // Roundoff is never exactly zero on this check, so a vanishing tolerance must fail.
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn configuration_errors_exit_two_with_partial_report() {
    let dir = scratch("config");
    let report = dir.join("aborted.json");
    let out = caxial()
        .args(["verify", "--dim", "2", "--L", "4", "--levels", "1"])
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let json = read_report(&report);
    assert!(json["aborted"].as_str().unwrap().contains("odd"), "{json}");

    let bad = dir.join("bad.json");
    std::fs::write(&bad, r#"{ "dim": 2, "no_such_field": 1 }"#).unwrap();
    let out = caxial().args(["verify", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = caxial().args(["verify", "--suite", "nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn environment_cap_skips_large_checks() {
    let out = caxial()
        .args(["verify", "--dim", "2", "--L", "3", "--levels", "2", "--suite", "sqrt", "--quiet"])
        .env("CAXIAL_MAX_DIM", "10")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let checks = json["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    for c in checks {
        assert_eq!(c["status"], "SKIPPED");
        assert!(c["reason"].as_str().unwrap().contains("resource cap"));
    }
}

#[test]
fn config_file_and_flag_override() {
    let dir = scratch("override");
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, r#"{ "dim": 2, "L": 3, "N": 1, "suites": ["geometry"], "seed": 7 }"#).unwrap();
    let report = dir.join("r.json");
    let out = caxial()
        .args(["verify", "--config"])
        .arg(&cfg)
        .args(["--suite", "calculus", "--seed", "9", "--quiet", "--report"])
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json = read_report(&report);
    assert_eq!(json["seed"], 9);
    assert!(json["checks"].as_array().unwrap().iter().all(|c| c["check_id"].as_str().unwrap().starts_with("calculus.")));
}

fn small(suites: Vec<Suite>) -> RunConfig {
    RunConfig {
        dim: Some(2),
        block_side: Some(3),
        levels: Some(2),
        instances: Vec::new(),
        suites,
        ..RunConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_reports() {
    let cfg = small(vec![Suite::Calculus, Suite::FeynmanLandau, Suite::Appendix]);
    let a = run_suite(&cfg).unwrap().without_timings();
    let b = run_suite(&cfg).unwrap().without_timings();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn report_round_trips_through_json() {
    let report = run_suite(&small(vec![Suite::Geometry])).unwrap();
    let back: Report = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(back.to_json().unwrap(), report.to_json().unwrap());
    assert!(back.checks.iter().all(|c| c.status == Status::Pass));
}

#[test]
fn filter_selects_by_substring() {
    let cfg = RunConfig { filter: vec!["m_gradient".into()], ..small(vec![Suite::Averaging]) };
    let report = run_suite(&cfg).unwrap();
    assert_eq!(report.checks.len(), 1);
    assert_eq!(report.checks[0].check_id, "averaging.m_gradient");
}
