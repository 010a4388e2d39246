use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn decmdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decmdp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON report")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn meeting_model(dir: &TempDir, extra: &[&str]) -> PathBuf {
    let path = dir.path().join("model.json");
    let mut args = vec!["gen", "--out", path_str(&path)];
    args.extend_from_slice(extra);
    report(&decmdp(&args));
    path
}

#[test]
fn classify_reports_independent_transitions() {
    let dir = TempDir::new().unwrap();
    let model = meeting_model(&dir, &["--width", "2", "--height", "2", "--sites", "3", "--horizon", "2"]);
    let r = report(&decmdp(&["classify", "--model", path_str(&model)]));
    let verdicts = &r["result"]["verdicts"];
    assert_eq!(verdicts["independent_transitions"]["holds"], true);
    assert_eq!(verdicts["independent_observations"]["holds"], true);
    assert!(r["model_digest"].as_str().unwrap().len() == 64);
}

#[test]
fn obstacle_variant_breaks_independence() {
    let dir = TempDir::new().unwrap();
    let model = meeting_model(
        &dir,
        &["--variant", "obstacle", "--sites", "3", "--obstacles", "1", "--horizon", "2"],
    );
    let r = report(&decmdp(&["classify", "--model", path_str(&model)]));
    let it = &r["result"]["verdicts"]["independent_transitions"];
    assert_eq!(it["holds"], false);
    assert!(it["witness"].is_array());
}

#[test]
fn oracle_refuses_over_budget() {
    let dir = TempDir::new().unwrap();
    let model = meeting_model(&dir, &["--sites", "3", "--horizon", "3"]);
    let out = decmdp(&["oracle", "--model", path_str(&model), "--budget", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(decmdp(&["classify", "--no-such-flag"]).status.code(), Some(64));
    assert_eq!(decmdp(&["no-such-command"]).status.code(), Some(64));
    assert_eq!(decmdp(&["classify"]).status.code(), Some(64));
    assert_eq!(decmdp(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_model_exits_1() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"type": "factored", "horizon": 0}"#).unwrap();
    assert_eq!(decmdp(&["classify", "--model", path_str(&path)]).status.code(), Some(1));
    let missing = dir.path().join("missing.json");
    assert_eq!(decmdp(&["classify", "--model", path_str(&missing)]).status.code(), Some(1));
}

#[test]
fn goal_solver_matches_oracle() {
    let dir = TempDir::new().unwrap();
    let model = meeting_model(&dir, &["--sites", "3", "--p", "0.8", "--horizon", "3"]);
    let ngoals = report(&decmdp(&["solve-ngoals", "--model", path_str(&model)]));
    let oracle = report(&decmdp(&["oracle", "--model", path_str(&model), "--history-check"]));
    let a = ngoals["result"]["value"].as_f64().unwrap();
    let b = oracle["result"]["value"].as_f64().unwrap();
    assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    assert_eq!(oracle["result"]["history_check"]["agrees"], true);
}

#[test]
fn policy_files_round_trip_through_eval() {
    let dir = TempDir::new().unwrap();
    let model = meeting_model(&dir, &["--sites", "3", "--horizon", "3"]);
    let policy = dir.path().join("policy.json");
    let solved = report(&decmdp(&[
        "solve-ngoals",
        "--model",
        path_str(&model),
        "--policy-out",
        path_str(&policy),
    ]));
    let eval = report(&decmdp(&[
        "eval",
        "--model",
        path_str(&model),
        "--policy",
        path_str(&policy),
        "--episodes",
        "2000",
    ]));
    let v = eval["result"]["value"].as_f64().unwrap();
    assert!((v - solved["result"]["value"].as_f64().unwrap()).abs() <= 1e-9);
    assert_eq!(eval["result"]["monte_carlo"]["agrees"], true);
}

#[test]
fn reports_are_deterministic_apart_from_timing() {
    let dir = TempDir::new().unwrap();
    let model = meeting_model(&dir, &["--sites", "0,3", "--jr", "3,10", "--horizon", "3"]);
    let run = || {
        let mut r = report(&decmdp(&["oracle", "--model", path_str(&model), "--seed", "5"]));
        r.as_object_mut().unwrap().remove("wall_clock_ms");
        r
    };
    assert_eq!(run(), run());
    let again = dir.path().join("again.json");
    report(&decmdp(&["gen", "--out", path_str(&again), "--sites", "0,3", "--jr", "3,10", "--horizon", "3"]));
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn comm_sweep_writes_csv() {
    let dir = TempDir::new().unwrap();
    let model = meeting_model(
        &dir,
        &["--width", "1", "--height", "2", "--sites", "0,1", "--jr", "1.5,4", "--start1", "0", "--start2", "0", "--horizon", "2"],
    );
    let csv = dir.path().join("sweep.csv");
    let r = report(&decmdp(&[
        "comm",
        "--model",
        path_str(&model),
        "--sweep",
        "-1:0:5",
        "--csv",
        path_str(&csv),
    ]));
    assert_eq!(r["result"]["monotone"], true);
    assert_eq!(r["result"]["bracketed"], true);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("cost,value,no_comm_value,centralized_value"));
    assert_eq!(lines.count(), 5);
}

#[test]
fn comm_menus_and_transform() {
    let dir = TempDir::new().unwrap();
    let model = meeting_model(&dir, &["--width", "1", "--height", "2", "--sites", "1", "--start1", "0", "--start2", "0", "--horizon", "2"]);
    let reduced = dir.path().join("reduced.json");
    let r = report(&decmdp(&[
        "comm",
        "--model",
        path_str(&model),
        "--cost",
        "-0.1",
        "--menu",
        "null,last,stale:1",
        "--transform",
        "--model-out",
        path_str(&reduced),
    ]));
    assert_eq!(r["result"]["language"].as_array().unwrap().len(), 3);
    let c = report(&decmdp(&["classify", "--model", path_str(&reduced)]));
    assert!(c["result"]["verdicts"].is_object());
}
