//! End-to-end behaviour of the `petrec` binary on tiny configurations.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn tiny(dir: &Path) -> Value {
    json!({
        "n_subjects": 3,
        "phantom": {"dims": [4, 32, 32]},
        "folds": {"k": 3, "folds_used": 1},
        "transgan": {"generator": {"height": 32, "width": 32}},
        "transgan_training": {"steps": 4, "batch_size": 2, "val_every": 2},
        "sdam_training": {"steps": 3, "batch_size": 2, "val_every": 2},
        "output_dir": dir.join("out"),
    })
}

fn run(dir: &Path, config: &Value, args: &[&str]) -> Output {
    std::fs::write(dir.join("config.json"), config.to_string()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_petrec"))
        .args(args)
        .arg("--config")
        .arg(dir.join("config.json"))
        .env_remove("PETREC_SEED")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn csv_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    for args in [&["generate-data"][..], &["train"], &["evaluate"]] {
        ok(&run(dir.path(), &cfg, args));
    }
    let out = dir.path().join("out");
    for kind in ["fpet", "lpet", "atlas"] {
        for s in 0..3 {
            assert!(out.join(format!("data/sub-00{s}/{kind}.pvol")).is_file());
        }
    }
    let runs = out.join("runs/fold0");
    assert_eq!(csv_rows(&runs.join("transgan_history.csv")), 4);
    assert_eq!(csv_rows(&runs.join("sdam_history.csv")), 3);
    // validation at steps 2 and 4; SDAM also scores its identity start at step 0
    assert_eq!(csv_rows(&runs.join("transgan_validation.csv")), 2);
    assert_eq!(csv_rows(&runs.join("sdam_validation.csv")), 3);

    let eval = out.join("eval");
    // one test subject, three modalities
    assert_eq!(csv_rows(&eval.join("metrics.csv")), 3);
    assert_eq!(csv_rows(&eval.join("slices.csv")), 3 * 4);
    assert_eq!(std::fs::read_to_string(eval.join("metrics.jsonl")).unwrap().lines().count(), 3);
    let manifest: Value = serde_json::from_slice(&std::fs::read(eval.join("manifest.json")).unwrap()).unwrap();
    let test = manifest["folds"][0]["test_subjects"][0].as_str().unwrap().to_string();
    for m in ["lpet", "generated", "refined"] {
        assert!(eval.join(format!("fold0/{test}/diff_{m}.png")).is_file());
        assert!(eval.join(format!("suvr/bland_altman_{m}.svg")).is_file());
        assert!(eval.join(format!("suvr/bland_altman_{m}.csv")).is_file());
        assert_eq!(manifest["overall"][m]["n_slices"], 4);
    }
    assert!(manifest["parameter_counts"]["trainable_total"].as_u64().unwrap() > 0);
    assert!(manifest["timings"]["evaluate_seconds"].as_f64().unwrap() >= 0.0);

    // suvr-report refuses to replace its own outputs, then regenerates them identically
    let before = std::fs::read(eval.join("suvr/agreement.json")).unwrap();
    let refused = run(dir.path(), &cfg, &["suvr-report"]);
    assert_eq!(refused.status.code(), Some(2));
    ok(&run(dir.path(), &cfg, &["suvr-report", "--force"]));
    assert_eq!(std::fs::read(eval.join("suvr/agreement.json")).unwrap(), before);

    let info = run(dir.path(), &cfg, &["info"]);
    ok(&info);
    let info: Value = serde_json::from_slice(&info.stdout).unwrap();
    assert_eq!(info["folds"][0]["sdam_checkpoint"], true);
    assert_eq!(info["evaluated"], true);
}

#[test]
fn sdam_before_transgan_is_a_missing_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    ok(&run(dir.path(), &cfg, &["generate-data"]));
    let out = run(dir.path(), &cfg, &["train", "--phase", "sdam"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("transgan.safetensors"), "{}", stderr(&out));
    let out = run(dir.path(), &cfg, &["evaluate"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn training_without_data_is_a_missing_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &tiny(dir.path()), &["train", "--phase", "transgan"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("generate-data"));
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    ok(&run(dir.path(), &cfg, &["generate-data"]));
    let manifest = dir.path().join("out/data/manifest.json");
    let first = std::fs::read(&manifest).unwrap();
    let out = run(dir.path(), &cfg, &["generate-data"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--force"));
    ok(&run(dir.path(), &cfg, &["generate-data", "--force"]));
    assert_eq!(std::fs::read(&manifest).unwrap(), first);
}

#[test]
fn seed_override_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    ok(&run(dir.path(), &cfg, &["generate-data"]));
    let path = dir.path().join("out/data/manifest.json");
    let a: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    std::fs::write(dir.path().join("config.json"), cfg.to_string()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_petrec"))
        .args(["generate-data", "--force", "--config"])
        .arg(dir.path().join("config.json"))
        .env("PETREC_SEED", "77")
        .output()
        .unwrap();
    ok(&out);
    let b: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(b["seed"], 77);
    assert_ne!(a["subjects"][0]["fpet_sha256"], b["subjects"][0]["fpet_sha256"]);
    assert_ne!(a["config_hash"], b["config_hash"]);
}

#[test]
fn invalid_config_names_the_offending_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg["transgan_training"]["steps"] = json!("many");
    let out = run(dir.path(), &cfg, &["info"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("transgan_training.steps"), "{}", stderr(&out));

    let mut cfg = tiny(dir.path());
    cfg["dose_fraction"] = json!(1.5);
    let out = run(dir.path(), &cfg, &["info"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("dose_fraction"));

    let mut cfg = tiny(dir.path());
    cfg["unknown_key"] = json!(1);
    assert_eq!(run(dir.path(), &cfg, &["info"]).status.code(), Some(2));
}

#[test]
fn paper_shape_profile_runs_at_full_slice_size() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "transgan_training": {"steps": 2, "val_every": 2},
        "sdam_training": {"steps": 2, "val_every": 2},
        "output_dir": dir.path().join("out"),
    });
    for args in [&["generate-data", "--profile", "paper-shape"][..], &["train", "--profile", "paper-shape"]] {
        ok(&run(dir.path(), &cfg, args));
    }
    let summary: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/runs/fold0/transgan_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 2);
    assert!(summary["best_val_psnr"].as_f64().unwrap().is_finite());
    assert_eq!(summary["encoders_unchanged"], true);
}
