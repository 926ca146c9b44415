use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn qrewrite(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrewrite"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("launch binary")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A run small enough to finish in seconds.
fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.json");
    let cfg = json!({
        "out_dir": dir.join("out"),
        "data": {"n_paragraphs": 12, "dev_fraction": 0.25},
        "guide_train": {"epochs": 1, "batch_size": 8, "lr": 1e-3},
        "ae_train": {"epochs": 1, "batch_size": 8, "lr": 1e-3},
        "rewrite": {"step_sizes": [1.0, 8.0], "max_steps": 2},
        "rewrite_limit": 4
    });
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn unknown_flag_is_a_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = qrewrite(&["pipeline", "--out-dir", "run", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"seed": 1, "learning_rate": 0.1}"#).unwrap();
    let out = qrewrite(&["gen-data", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
}

#[test]
fn invalid_override_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = qrewrite(&["gen-data", "--beta-a", "0.9", "--beta-b", "0.5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = qrewrite(&["gen-data", "--mode", "sideways"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rewrite_without_guide_names_the_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = qrewrite(&["gen-data", "--out-dir", "run"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let out = qrewrite(&["rewrite", "--out-dir", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("guide checkpoint") && msg.contains("guide.ckpt"), "{msg}");
}

#[test]
fn corrupt_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(qrewrite(&["gen-data", "--out-dir", "run"], dir.path()).status.success());
    fs::create_dir_all(dir.path().join("run/models")).unwrap();
    fs::write(dir.path().join("run/models/guide.ckpt"), b"not a checkpoint").unwrap();
    let out = qrewrite(&["train-ae", "--out-dir", "run"], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn tiny_pipeline_writes_every_artifact_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = qrewrite(&["pipeline", "--config", cfg.to_str().unwrap(), "--seed", "3", "--beta-t", "0.4"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let run = dir.path().join("out");
    for f in [
        "data/train.json",
        "data/dev.json",
        "data/vocab.txt",
        "models/guide.ckpt",
        "models/ae.ckpt",
        "models/guide_log.json",
        "models/ae_log.json",
        "augment/augmented.jsonl",
        "augment/merged.json",
        "augment/contrast.txt",
        "augment/contrast.json",
        "augment/rewrite_report.json",
        "eval/report.txt",
        "eval/report.json",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    for sub in ["data", "models", "augment", "eval"] {
        let echo: Value = serde_json::from_str(&fs::read_to_string(run.join(sub).join("config.json")).unwrap()).unwrap();
        assert_eq!(echo["seed"], 3, "{sub}");
        assert_eq!(echo["rewrite"]["beta_t"], 0.4, "{sub}");
        assert_eq!(echo["data"]["n_paragraphs"], 12, "{sub}");
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(run.join("eval/report.json")).unwrap()).unwrap();
    for section in ["mrc", "reconstruction", "rewrite"] {
        assert!(report[section]["metrics"].is_object(), "{section}");
    }
}

#[test]
fn f64_precision_runs_the_same_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = qrewrite(&["pipeline", "--config", cfg.to_str().unwrap(), "--precision", "f64"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("out/eval/report.json").is_file());
}
