use std::path::Path;
use std::process::{Command, Output};

fn routecal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_routecal")).args(args).output().unwrap()
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(name).to_string_lossy().into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn ingest_prints_block_shares() {
    let out = routecal(&["ingest", &data("tests/fixtures/agent4_shares.csv"), "--block", "80"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("traveler_id,first_period,last_period,expressway,local,expressway_pct,local_pct"));
    assert!(stdout.contains("\n4,1,80,10,70,12.5,87.5\n"), "{stdout}");
    assert!(stdout.contains("\n4,81,160,8,72,10.0,90.0\n"), "{stdout}");
}

#[test]
fn ingest_rejects_inconsistent_trace() {
    let out = routecal(&["ingest", &data("tests/fixtures/shifted_time.csv")]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("period 2 traveler 7"), "{stderr}");
}

#[test]
fn closed_loop_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let config = data("examples/data/scripted_config.json");
    assert!(routecal(&["synth", &data("examples/data/regime_cohort.json"), "--out", &s(&trace)]).status.success());
    let runs = dir.path().join("runs");
    let out = routecal(&[
        "simulate",
        "--mode",
        "closed",
        "--range",
        "81:100",
        "--config",
        &config,
        "--trace",
        &s(&trace),
        "--method",
        "recursive",
        "--method",
        "base",
        "--out",
        &s(&runs),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let flows = std::fs::read_to_string(runs.join("base/flows.csv")).unwrap();
    assert_eq!(flows.lines().count(), 21);
    let out = routecal(&["evaluate", "--truth", &s(&trace), "--runs", &s(&runs.join("recursive")), &s(&runs.join("base"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(runs.join("base/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["first_period"], 81);
    assert_eq!(metrics["per_agent"].as_array().unwrap().len(), 15);
    let report = dir.path().join("report");
    assert!(routecal(&["report", "--out", &s(&report), "--runs", &s(&runs.join("recursive")), &s(&runs.join("base"))])
        .status
        .success());
    assert!(report.join("win_rates.csv").exists());
}

#[test]
fn ours_needs_personas() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    assert!(routecal(&["synth", &data("examples/data/regime_cohort.json"), "--out", &s(&trace)]).status.success());
    let out = routecal(&[
        "simulate",
        "--config",
        &data("examples/data/scripted_config.json"),
        "--trace",
        &s(&trace),
        "--method",
        "ours",
        "--out",
        &s(&dir.path().join("runs")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no calibrated persona"));
}

#[test]
fn http_backend_without_endpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = routecal(&[
        "calibrate",
        "--config",
        &data("examples/data/scripted_config.json"),
        "--backend",
        "http",
        "--trace",
        &data("tests/fixtures/agent4_shares.csv"),
        "--out",
        &s(dir.path()),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("endpoint_url"));
}
