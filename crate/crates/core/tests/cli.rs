use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hire::cli::{EXIT_CONFIG, EXIT_FAILURE, EXIT_OK};

fn hire(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hire")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small synthetic set plus a toy config pointing at it.
fn setup(root: &Path) -> PathBuf {
    let data = root.join("data");
    let o = hire(&["synth", "--seed", "3", "--images", "12", "--out", data.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let cfg = serde_json::json!({
        "train_data": data.join("train"),
        "val_data": data.join("val"),
        "out_dir": root.join("runs"),
        "d_model": 16,
        "heads": 2,
        "d_map": 8,
        "lr": 0.005,
        "epochs": 3,
        "batch_size": 6,
    });
    let path = root.join("cfg.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn synth_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let cfg = cfg.to_str().unwrap();

    let t = hire(&["train", "--config", cfg]);
    assert_eq!(code(&t), EXIT_OK, "{}", stderr(&t));
    let run = PathBuf::from(stdout(&t).trim());
    assert!(run.file_name().unwrap().to_str().unwrap().ends_with("-s0"));
    for f in ["config.json", "metrics.jsonl", "best.ckpt", "last.ckpt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count(), 3);

    let e = hire(&["eval", "--config", cfg]);
    assert_eq!(code(&e), EXIT_OK, "{}", stderr(&e));
    assert!(stdout(&e).contains("i2t@1"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(run.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["shortfalls"].as_array().unwrap().len(), 0);

    // an unreachable expectation fails the run without being a config error
    let exp = dir.path().join("exp.json");
    fs::write(&exp, r#"{"i2t": {"rsum": 601.0}}"#).unwrap();
    let m = hire(&["eval", "--config", cfg, "--expectations", exp.to_str().unwrap()]);
    assert_eq!(code(&m), EXIT_FAILURE);
    assert!(stdout(&m).contains("MISSED i2t rsum"));

    fs::write(&exp, r#"{"i2t": {"r42": 1.0}}"#).unwrap();
    let u = hire(&["eval", "--config", cfg, "--expectations", exp.to_str().unwrap()]);
    assert_eq!(code(&u), EXIT_CONFIG);
}

#[test]
fn reruns_write_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let cfg = cfg.to_str().unwrap();
    let first = hire(&["train", "--config", cfg, "--epochs", "2"]);
    let run = PathBuf::from(stdout(&first).trim());
    let read = |f: &str| fs::read(run.join(f)).unwrap();
    let (metrics, best, conf) = (read("metrics.jsonl"), read("best.ckpt"), read("config.json"));
    let again = hire(&["train", "--config", cfg, "--epochs", "2"]);
    assert_eq!(stdout(&again), stdout(&first));
    assert_eq!(read("metrics.jsonl"), metrics);
    assert_eq!(read("best.ckpt"), best);
    assert_eq!(read("config.json"), conf);

    // a different seed lands in a different run directory
    let other = hire(&["train", "--config", cfg, "--epochs", "2", "--seed", "1"]);
    assert_ne!(stdout(&other), stdout(&first));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let cfg = cfg.to_str().unwrap();

    let o = hire(&["train", "--config", cfg, "--bogus", "1"]);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(stderr(&o).contains("bogus"));

    let o = hire(&["train", "--config", cfg, "--lr", "fast"]);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(stderr(&o).contains("lr"));

    let o = hire(&["train", "--config", cfg, "--components.vssg", "maybe"]);
    assert_eq!(code(&o), EXIT_CONFIG);

    let o = hire(&["train", "--config", cfg, "--batch-size", "1"]);
    assert_eq!(code(&o), EXIT_CONFIG);

    assert_eq!(code(&hire(&["launch"])), EXIT_CONFIG);
    assert_eq!(code(&hire(&["train", "--config", "/nonexistent/cfg.json"])), EXIT_CONFIG);
}

#[test]
fn missing_data_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = hire(&["train", "--train-data", dir.path().join("none").to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_FAILURE);
}

#[test]
fn gradcheck_passes_at_toy_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let o = hire(&["gradcheck", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    assert!(stdout(&o).contains("max relative error"));
}
