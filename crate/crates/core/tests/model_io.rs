use std::fs;

use cubeshap::model::{load_model, save_model};
use cubeshap::zoo::model_zoo;
use cubeshap::{load_predictor, Error, FeatureKind, LoadedModel, Predictor};

#[test]
fn zoo_models_survive_a_save_load_cycle() {
    let dir = tempfile::tempdir().unwrap();
    for z in model_zoo() {
        let path = dir.path().join(format!("{}.json", z.name));
        save_model(&z.model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, z.model, "{}", z.name);
        assert_eq!(back.predict(z.pair.x1()).unwrap(), z.model.predict(z.pair.x1()).unwrap());
    }
}

#[test]
fn parse_errors_point_at_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"type": "linear", "weights": [1.0, "x"]}"#).unwrap();
    let err = load_model(&path).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Parse { .. }), "{msg}");
    assert!(msg.contains("weights"), "{msg}");

    fs::write(&path, r#"{"type": "multilinear", "d": 2, "terms": [{"coalition": [0, 5], "coefficient": 1.0}]}"#).unwrap();
    let msg = load_model(&path).unwrap_err().to_string();
    assert!(msg.contains("coalition"), "{msg}");

    let missing = dir.path().join("missing.json");
    assert!(matches!(load_model(&missing), Err(Error::Io { .. })));
}

#[test]
fn feature_metadata_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    fs::write(
        &path,
        r#"{"type": "linear", "weights": [1.0, 2.0],
            "features": [{"name": "age"}, {"name": "smoker", "kind": "categorical"}]}"#,
    )
    .unwrap();
    let m = load_predictor(&path).unwrap();
    assert_eq!(m.feature_names(), vec!["age", "smoker"]);
    assert_eq!(m.feature_kinds(), vec![FeatureKind::Continuous, FeatureKind::CategoricalBinary]);

    fs::write(&path, r#"{"type": "linear", "weights": [1.0, 2.0], "features": [{"name": "age"}]}"#).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Parse { .. })));
}

fn external_config(dir: &std::path::Path, command: &str, batch_limit: usize) -> std::path::PathBuf {
    let path = dir.join("ext.json");
    let cfg = serde_json::json!({
        "type": "external",
        "d": 2,
        "request": dir.join("req.csv"),
        "response": dir.join("resp.txt"),
        "command": command,
        "batch_limit": batch_limit,
    });
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn external_scorer_round_trips_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = external_config(
        dir.path(),
        r#"awk -F, '{ printf "%.17g\n", 2 * $1 + $2 * $2 }' {request} > {response}"#,
        3,
    );
    let m = load_predictor(&path).unwrap();
    assert!(matches!(m, LoadedModel::External(_)));
    assert_eq!(m.dim(), 2);
    assert!(!m.is_smooth());
    let rows: Vec<f64> = (0..7).flat_map(|i| [i as f64 * 0.25, 1.0 - i as f64 * 0.1]).collect();
    let got = m.predict_rows(&rows).unwrap();
    assert_eq!(got.len(), 7);
    for (x, g) in rows.chunks(2).zip(&got) {
        assert!((g - (2.0 * x[0] + x[1] * x[1])).abs() < 1e-12);
    }
}

#[test]
fn external_protocol_faults_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let short = external_config(dir.path(), "head -n 1 {request} | cut -d, -f1 > {response}", 10);
    let err = load_predictor(&short).unwrap().predict_rows(&[0.0, 1.0, 2.0, 3.0]).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");

    let failing = external_config(dir.path(), "exit 3", 10);
    let err = load_predictor(&failing).unwrap().predict_rows(&[0.0, 1.0]).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");

    let garbage = external_config(dir.path(), "echo nope > {response}", 10);
    let err = load_predictor(&garbage).unwrap().predict_rows(&[0.0, 1.0]).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
}
