use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn qgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qgraph"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn qgraph")
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn tiny_run_passes_and_writes_a_complete_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = qgraph(&["run", "--config", bundled("tiny-v2.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}\n{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout.contains("overall: PASS"));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "complete");
    for file in ["config.json", "graph.json", "system.json", "smatrix.json", "correlators.csv", "report.txt"] {
        assert!(out.join(file).is_file(), "missing {file}");
    }
}

#[test]
fn seed_override_changes_results_and_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = bundled("kirchhoff-v6.json");
    let run = |seed: &str, dir: &str| {
        let out = tmp.path().join(dir);
        let o = qgraph(&["correlate", "--config", cfg.to_str().unwrap(), "--seed", seed, "--samples", "100", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        out
    };
    let a = run("5", "a");
    let b = run("6", "b");
    assert_ne!(std::fs::read(a.join("correlators.csv")).unwrap(), std::fs::read(b.join("correlators.csv")).unwrap());
    assert_eq!(read_json(&a.join("config.json"))["sampling"]["seed"], 5);
    assert_eq!(read_json(&a.join("config.json"))["sampling"]["n_samples"], 100);
}

#[test]
fn invalid_config_exits_2_with_field_path() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    let text = std::fs::read_to_string(bundled("tiny-v2.json")).unwrap().replace("\"leads\": 2", "\"leads\": -2");
    std::fs::write(&path, text).unwrap();
    let o = qgraph(&["generate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("graph.leads"));
}

#[test]
fn unknown_field_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    let text = std::fs::read_to_string(bundled("tiny-v2.json")).unwrap().replace("\"seed\": 1 }", "\"seed\": 1, \"colour\": 3 }");
    std::fs::write(&path, text).unwrap();
    let o = qgraph(&["generate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn unknown_suite_is_a_usage_error() {
    assert_eq!(qgraph(&["verify", "bogus"]).status.code(), Some(2));
}

#[test]
fn gap_suite_reports_pass() {
    let o = qgraph(&["verify", "gap"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
}

#[test]
fn failing_stage_leaves_a_partial_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{
      "name": "undersized-oracle",
      "graph": { "vertices": 4, "leads": 2, "length_min": 1.0, "length_max": 2.0, "seed": 1 },
      "vertices": { "family": "kirchhoff" },
      "sampling": { "n_samples": 100, "seed": 1 },
      "sweep": { "points": 4, "spacing_x": 1.0, "pairs": "off-diagonal" },
      "oracle": { "dim": 20, "calibration": { "draws": 100, "energies_per_draw": 2, "seed": 2 },
                  "points": 4, "sweeps_per_draw": 1, "draws": 100, "seed": 3 }
    }"#;
    let path = tmp.path().join("cfg.json");
    std::fs::write(&path, cfg).unwrap();
    let out = tmp.path().join("out");
    let o = qgraph(&["run", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "partial");
    assert_eq!(manifest["failed_stage"], "oracle");
    assert!(out.join("curve.csv").is_file());
}

#[test]
fn smatrix_prints_a_unitary_sample() {
    let o = qgraph(&["smatrix", "--config", bundled("tiny-v2.json").to_str().unwrap(), "--kappa", "0.25"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["unitarity_residual"].as_f64().unwrap() < 1e-12);
    assert_eq!(v["s"].as_array().unwrap().len(), 2);
}
