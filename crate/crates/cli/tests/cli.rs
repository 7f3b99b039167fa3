use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cubeshap::model::save_model;
use cubeshap::zoo::model_zoo;

fn cubeshap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cubeshap")).args(args).output().unwrap()
}

fn setup(dir: &Path) -> (String, String) {
    let z = model_zoo().into_iter().find(|z| z.name == "mlp-categorical").unwrap();
    let model = dir.join("model.json");
    let pair = dir.join("pair.json");
    save_model(&z.model, &model).unwrap();
    fs::write(&pair, serde_json::json!({ "x0": z.pair.x0(), "x1": z.pair.x1() }).to_string()).unwrap();
    (model.display().to_string(), pair.display().to_string())
}

#[test]
fn explain_writes_locals_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let (model, pair) = setup(dir.path());
    let out = cubeshap(&["explain", "--model", &model, "--pair", &pair, "--m", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("feature,name,singleton,equal,"));
    assert!(text.contains("smoker"));
}

#[test]
fn json_reports_are_valid_and_efficient() {
    let dir = tempfile::tempdir().unwrap();
    let (model, pair) = setup(dir.path());
    let out_dir = dir.path().join("out");
    let out = cubeshap(&[
        "explain", "--model", &model, "--pair", &pair, "--format", "json", "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let dy = v["delta_y"].as_f64().unwrap();
    for r in v["locals"].as_array().unwrap() {
        let s: f64 = r["values"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        // Floats in JSON are rounded for display.
        assert!((s - dy).abs() < 1e-9, "{}", r["rule"]);
    }
}

#[test]
fn capacity_and_input_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (model, pair) = setup(dir.path());
    let cap = cubeshap(&["explain", "--model", &model, "--pair", &pair, "--exhaustive-cap", "2"]);
    assert_eq!(cap.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&cap.stderr).contains("exhaustive cap"));

    let missing = cubeshap(&["explain", "--model", "/nonexistent/model.json", "--pair", &pair]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/model.json"));

    let bad_flag = cubeshap(&["explain", "--bogus"]);
    assert_eq!(bad_flag.status.code(), Some(1));
    assert_eq!(cubeshap(&["--help"]).status.code(), Some(0));
}

#[test]
fn bench_writes_rows() {
    let out = cubeshap(&["bench", "--ks", "2", "--ms", "2,3", "--reps", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("R^2"));
}
