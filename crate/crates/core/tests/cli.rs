//! Command-line behaviour of the `span` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn span(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_span")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small, quickly trained model shared by the tests in this file.
fn tiny_model() -> &'static Path {
    static MODEL: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    let (_, path) = MODEL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.bin");
        let out = span(&["train", "--synthetic", "8", "--epochs", "3", "--hidden", "16", "--out", s(&path)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (dir, path)
    });
    path
}

/// Robot within 0.8 m of a pedestrian for exactly three steps, then clear of it
/// and on to the goal at (2, 0).
fn three_collision_log_text() -> String {
    let mut text = String::from(
        "# span-episode-log: 1\n# controller: span\n# scenario: fixture\n# seed: 7\n\
         # scenario_hash: 00\n# dt: 0.1\n# goal: 2 0\n# goal_tolerance: 0.5\n\
         # r_robot: 0.4\n# r_ped: 0.4\n# timing_ms: 10 30 20\n\
         step,t,agent,x,y,theta,v,omega,map_hit,collision\n",
    );
    for k in 0..=15 {
        let (x, py, hit) = if k < 3 { (0.1 * k as f64, 0.0, 1) } else { (0.1 * k as f64 + 0.6, 5.0, 0) };
        let t = (k as f64 * 0.1 * 1e9).round() / 1e9;
        text.push_str(&format!("{k},{t},robot,{x},0,0,1,0,0,{hit}\n{k},{t},p,0.7,{py},,,,,\n"));
    }
    text
}

#[test]
fn evaluate_reports_three_collision_steps_as_point_three_seconds() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    std::fs::write(&log, three_collision_log_text()).unwrap();
    let out = span(&["evaluate", "--log", s(&log)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"doc_s\": 0.3"), "{text}");
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["ttg_s"], 0.9);
    assert_eq!(v["mean_iter_ms"], 20.0);
    assert_eq!(v["max_iter_ms"], 30.0);
}

#[test]
fn evaluate_rejects_flags_that_contradict_positions() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    let tampered = three_collision_log_text().replacen("robot,0,0,0,1,0,0,1", "robot,0,0,0,1,0,0,0", 1);
    std::fs::write(&log, tampered).unwrap();
    assert_eq!(span(&["evaluate", "--log", s(&log)]).status.code(), Some(3));
}

#[test]
fn exit_codes() {
    assert_eq!(span(&["bogus"]).status.code(), Some(2));
    assert_eq!(span(&["simulate"]).status.code(), Some(2));
    assert_eq!(span(&["--help"]).status.code(), Some(0));
    let missing = span(&["evaluate", "--log", "/nonexistent/log.csv"]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/log.csv"));
}

#[test]
fn unknown_scenario_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"version": 1, "seed": 1, "robot": {"start": [0, 0, 0], "goal": [1, 0]}, "speed_limit": 2}"#,
    )
    .unwrap();
    let out = span(&["baseline", "--scenario", s(&path), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("speed_limit"));
}

#[test]
fn predict_writes_one_row_per_step_for_the_mean_and_each_sample() {
    let out = span(&[
        "predict",
        "--model",
        s(tiny_model()),
        "--window",
        "0,0;0.1,0;0.2,0;0.3,0;0.4,0",
        "--samples",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4 * 40);
    assert_eq!(rows.iter().filter(|r| r.starts_with("mean,")).count(), 40);
    assert!(rows.iter().any(|r| r.starts_with("sample,2,4,")));
}

#[test]
fn evaluate_reproduces_simulate_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/open.json");
    let out_dir = dir.path().join("run");
    let out = span(&[
        "simulate",
        "--scenario",
        s(&scenario),
        "--model",
        s(tiny_model()),
        "--out",
        s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let written = std::fs::read_to_string(out_dir.join("metrics.json")).unwrap();
    let eval = span(&["evaluate", "--log", s(&out_dir.join("log.csv"))]);
    assert_eq!(String::from_utf8(eval.stdout).unwrap(), written);
}

#[test]
fn several_scenarios_get_their_own_directories() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for name in ["one", "two"] {
        let p = dir.path().join(format!("{name}.json"));
        std::fs::write(
            &p,
            r#"{"version": 1, "seed": 2, "robot": {"start": [0, 0, 0], "goal": [2, 0]}, "params": {"controller": "reactive"}}"#,
        )
        .unwrap();
        paths.push(p);
    }
    let out_dir = dir.path().join("out");
    let out = span(&[
        "simulate",
        "--scenario",
        s(&paths[0]),
        "--scenario",
        s(&paths[1]),
        "--jobs",
        "2",
        "--out",
        s(&out_dir),
        "--plot",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["one", "two"] {
        for file in ["log.csv", "metrics.json", "plot.csv"] {
            assert!(out_dir.join(name).join(file).is_file(), "{name}/{file}");
        }
    }
}
