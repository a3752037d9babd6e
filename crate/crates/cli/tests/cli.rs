use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "dataset": {
    "sim": {"phantom_width_mm": 6.0, "phantom_depth_mm": 5.0},
    "n_fds_phantoms": 3,
    "n_lds_phantoms": 3,
    "n_test_phantoms_per_class": 2,
    "train_patches": 40,
    "val_patches": 12,
    "test_patches": 12,
    "patch_rows": 64,
    "patch_cols": 16
  },
  "train": {"schedule": {"max_epochs": 2, "batch_size": 16}},
  "bootstrap": {"n_resamples": 50}
}"#;

fn qus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qus")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn simulate() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.json");
    fs::write(&config, TINY).unwrap();
    let data = root.join("data");
    let o = qus(&["--config", s(&config), "--seed", "5", "--out", s(&data), "simulate"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    Fixture { _dir: dir, root, config, data }
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&qus(&["--help"])), 0);
    assert_eq!(code(&qus(&["--version"])), 0);
    assert_eq!(code(&qus(&[])), 1);
    assert_eq!(code(&qus(&["bogus"])), 1);
    assert_eq!(code(&qus(&["--seed", "x", "simulate"])), 1);
    assert_eq!(code(&qus(&["train", "--data", "nowhere", "--model", "cnn9"])), 1);
}

#[test]
fn malformed_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"nonsense": 1}"#).unwrap();
    let o = qus(&["--config", s(&cfg), "--out", s(dir.path()), "simulate"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn missing_dataset_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = qus(&["--out", s(dir.path()), "featurize", "--data", s(&dir.path().join("absent"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unwritable_output_fails() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let cfg = dir.path().join("tiny.json");
    fs::write(&cfg, TINY).unwrap();
    let o = qus(&["--config", s(&cfg), "--out", s(&blocker.join("sub")), "simulate"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn end_to_end_feature_models() {
    let fx = simulate();
    let run = read_json(&fx.data.join("run.json"));
    assert_eq!(run["command"], "simulate");
    assert_eq!(run["config"]["dataset"]["sim"]["rng_seed"], 5);
    let manifest = read_json(&fx.data.join("manifest.json"));
    assert_eq!(manifest["splits"]["train"]["count"], 40);

    let feats = fx.root.join("features");
    let o = qus(&["--config", s(&fx.config), "--out", s(&feats), "featurize", "--data", s(&fx.data)]);
    assert_eq!(code(&o), 0);
    for f in ["features_train.csv", "features_val.csv", "features_test.csv", "normalizer.json", "run.json"] {
        assert!(feats.join(f).exists(), "{f}");
    }

    for model in ["mlp", "rf", "svm"] {
        let dir = fx.root.join(model);
        let o = qus(&["--config", s(&fx.config), "--seed", "5", "--quiet", "--out", s(&dir), "train", "--data", s(&fx.data), "--model", model]);
        assert_eq!(code(&o), 0, "{model}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(dir.join("model.qusm").exists());
        assert_eq!(read_json(&dir.join("run.json"))["args"]["model"], model);

        let ev = dir.join("eval");
        let o = qus(&["--config", s(&fx.config), "--out", s(&ev), "eval", "--model", s(&dir.join("model.qusm")), "--data", s(&fx.data)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let report = read_json(&ev.join("report.json"));
        let auc = report["auc"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&auc));
        assert!(report.get("warning").is_none());
        assert!(ev.join("roc.csv").exists() && ev.join("scores.csv").exists());

        let ev = dir.join("eval_train");
        let o = qus(&["--config", s(&fx.config), "--out", s(&ev), "eval", "--model", s(&dir.join("model.qusm")), "--data", s(&fx.data), "--split", "train"]);
        assert_eq!(code(&o), 0);
        assert!(read_json(&ev.join("report.json"))["warning"].is_string());
    }

    let frame = fx.data.join("frames/sim-test-fds-000.qusf");
    let out = fx.root.join("map");
    let o = qus(&["--config", s(&fx.config), "--out", s(&out), "map", "--model", s(&fx.root.join("mlp/model.qusm")), "--frame", s(&frame), "--overlap", "0.5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let meta = read_json(&out.join("map.json"));
    let [fr, fc] = [meta["frame"][0].as_u64().unwrap(), meta["frame"][1].as_u64().unwrap()];
    assert_eq!(meta["rows"].as_u64().unwrap(), (fr - 64) / 32 + 1);
    assert_eq!(meta["cols"].as_u64().unwrap(), (fc - 16) / 8 + 1);
    let pgm = fs::read(out.join("map.pgm")).unwrap();
    assert!(pgm.starts_with(format!("P5\n{fc} {fr}\n255\n").as_bytes()));

    // SVM scores are decision values, not probabilities
    let o = qus(&["--config", s(&fx.config), "--out", s(&fx.root.join("svm_map")), "map", "--model", s(&fx.root.join("svm/model.qusm")), "--frame", s(&frame)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn finetune_guards_and_zero_epochs() {
    let fx = simulate();
    let dir = fx.root.join("cnn1");
    let o = qus(&["--config", s(&fx.config), "--quiet", "--out", s(&dir), "train", "--data", s(&fx.data), "--model", "cnn1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = dir.join("model.qusm");

    let o = qus(&["--config", s(&fx.config), "--out", s(&fx.root.join("leak")), "finetune", "--model", s(&ckpt), "--data", s(&fx.data), "--adapt-split", "test"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("leakage"));

    let zero = fx.root.join("zero.json");
    let mut cfg: Value = serde_json::from_str(TINY).unwrap();
    cfg["finetune"] = serde_json::json!({"schedule": {"max_epochs": 0, "batch_size": 16}});
    fs::write(&zero, cfg.to_string()).unwrap();
    let out = fx.root.join("ft0");
    let o = qus(&["--config", s(&zero), "--quiet", "--out", s(&out), "finetune", "--model", s(&ckpt), "--data", s(&fx.data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(out.join("model.qusm")).unwrap(), fs::read(&ckpt).unwrap());
    assert!(out.join("run.json").exists());

    let o = qus(&["--config", s(&fx.config), "--out", s(&fx.root.join("fusion")), "train", "--data", s(&fx.data), "--model", "cnn1", "--mlp-branch", s(&ckpt)]);
    assert_eq!(code(&o), 1);
}
