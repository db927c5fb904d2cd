//! The shipped scenarios against frozen outputs.

use std::path::{Path, PathBuf};

use hidden_reach::report::{cmd_bound, cmd_calibrate, ScenarioConfig};
use serde_json::Value;

fn manifest() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn load(name: &str, out: &Path) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::load(&manifest().join("examples").join(format!("{name}.json"))).unwrap();
    cfg.output.directory = out.display().to_string();
    cfg
}

fn fixture(name: &str, file: &str) -> PathBuf {
    manifest().join("tests/fixtures").join(name).join(file)
}

#[test]
fn calibration_tables_are_frozen() {
    for (name, files) in [
        ("two_state_case1", &["calibration.csv"][..]),
        ("two_state_case2", &["calibration.csv", "calibration_case2.csv"][..]),
    ] {
        let dir = tempfile::tempdir().unwrap();
        cmd_calibrate(&load(name, dir.path())).unwrap();
        for f in files {
            let got = std::fs::read_to_string(dir.path().join(f)).unwrap();
            let want = std::fs::read_to_string(fixture(name, f)).unwrap();
            assert_eq!(got, want, "{name}/{f}");
        }
    }
}

#[test]
fn bounds_match_frozen_values() {
    for name in ["two_state_case1", "two_state_case2"] {
        let dir = tempfile::tempdir().unwrap();
        let bundle = cmd_bound(&load(name, dir.path())).unwrap();
        let want: Value = serde_json::from_str(&std::fs::read_to_string(fixture(name, "bounds.json")).unwrap()).unwrap();
        let want = want["bounds"].as_array().unwrap();
        assert_eq!(bundle.bounds.len(), want.len());
        for (got, w) in bundle.bounds.iter().zip(want) {
            assert_eq!(got.label, w["label"].as_str().unwrap());
            assert!(got.certified);
            let v = w["neg_logdet"].as_f64().unwrap();
            assert!((got.neg_logdet - v).abs() / v < 1e-6, "{}: {} vs {v}", got.label, got.neg_logdet);
            // the optimum in b is flat, so the shape is compared loosely
            for (r, row) in got.p_shape.iter().enumerate() {
                for (c, x) in row.iter().enumerate() {
                    let y = w["p_shape"][r][c].as_f64().unwrap();
                    assert!((x - y).abs() <= 1e-3 * y.abs().max(1e-3), "{}: P[{r}][{c}] {x} vs {y}", got.label);
                }
            }
        }
        assert!(dir.path().join("bounds.svg").exists());
    }
}
