use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trim-mpc"))
}

fn problem(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("UTF-8 path")
}

#[test]
fn solve_line_has_value_four() {
    let out = run(&["solve", path_str(&problem("line.json"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert!((v["value"].as_f64().unwrap() - 4.0).abs() <= 1e-9);
    assert_eq!(v["controls"]["segments"][0][0]["u1"].as_f64().unwrap(), 2.0);
}

#[test]
fn solve_at_target_rests() {
    let out = run(&["solve", path_str(&problem("at_target.json"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["value"].as_f64().unwrap(), 0.0);
    assert_eq!(v["plan_ids"], serde_json::json!([1]));
}

#[test]
fn solve_writes_trajectory_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("traj.csv");
    let out = run(&["solve", path_str(&problem("line.json")), "--csv", path_str(&csv), "--dt", "0.25"]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,x1,x2,x3,u1,u2");
    assert_eq!(lines.len(), 6);
    assert_eq!(*lines.last().unwrap(), "1,0,0,0,2,0");
}

#[test]
fn mpc_without_steps_stalls() {
    let out = run(&["mpc", path_str(&problem("line.json")), "--max-steps", "0"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["terminated"], "stalled");
    assert_eq!(v["steps"], 0);
}

#[test]
fn mpc_line_trace_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for k in 0..2 {
        let summary = dir.path().join(format!("s{k}.json"));
        let trace = dir.path().join(format!("t{k}.csv"));
        let out = run(&[
            "mpc",
            path_str(&problem("line.json")),
            "-o",
            path_str(&summary),
            "--trace",
            path_str(&trace),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        texts.push((std::fs::read(&summary).unwrap(), std::fs::read_to_string(&trace).unwrap()));
    }
    assert_eq!(texts[0], texts[1]);
    let v: Value = serde_json::from_slice(&texts[0].0).unwrap();
    assert_eq!(v["terminated"], "converged");
    assert_eq!(v["steps"], 35);
    assert!((v["closed_loop_cost"].as_f64().unwrap() - 2.182).abs() <= 5e-4);
    let trace = &texts[0].1;
    assert!(trace.starts_with("t,x1,x2,x3,u1,u2,V,cost,replanned\n"));
    assert_eq!(trace.lines().count(), 37);
}

#[test]
fn manifest_lists_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("run.json");
    let summary = dir.path().join("s.json");
    let out = run(&[
        "--manifest",
        path_str(&manifest),
        "mpc",
        path_str(&problem("line_coarse.json")),
        "-o",
        path_str(&summary),
    ]);
    assert!(out.status.success());
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["command"], "mpc");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 1);
    assert!(m["seed"].is_u64());
}

#[test]
fn library_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let lib = dir.path().join("lib.json");
    assert!(run(&["library", "--emit", path_str(&lib)]).status.success());
    let out = run(&["library", "--validate", path_str(&lib)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("5 trims"));
}

#[test]
fn duplicate_controls_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let lib = dir.path().join("dup.json");
    std::fs::write(
        &lib,
        r#"[{"id":1,"u1":0,"u2":0,"name":"rest"},
            {"id":2,"u1":1,"u2":0,"name":"a"},
            {"id":7,"u1":1,"u2":0,"name":"b"}]"#,
    )
    .unwrap();
    let out = run(&["library", "--validate", path_str(&lib)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('2') && err.contains('7'), "{err}");
}

#[test]
fn malformed_problem_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"x_hat\": [0, 1]}").unwrap();
    let out = run(&["solve", path_str(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    let missing = run(&["solve", path_str(&dir.path().join("nope.json"))]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn unknown_suite_is_an_input_error() {
    assert_eq!(run(&["verify", "nonsense"]).status.code(), Some(1));
}

#[test]
fn group_suite_passes() {
    let out = run(&["verify", "group", "--samples", "50"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["pass"], true);
}

#[test]
fn transcribe_example_converges() {
    let out = run(&["transcribe"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["converged"], true);
    assert!((v["objective"].as_f64().unwrap() - 0.5141).abs() <= 0.02 * 0.5141);
}

#[test]
fn json_floats_round_trip() {
    let out = run(&["solve", path_str(&problem("line.json"))]);
    let text = String::from_utf8(out.stdout).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    let again = serde_json::to_string(&v).unwrap();
    let back: Value = serde_json::from_str(&again).unwrap();
    assert_eq!(v, back);
    assert!(text.contains("e0"), "floats are printed in exponent form");
}
