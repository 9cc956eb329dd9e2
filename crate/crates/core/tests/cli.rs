use std::path::Path;
use std::process::{Command, Output};

fn dasecount(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dasecount")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_ok(args: &[&str]) {
    let o = dasecount(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
}

const SMOKE_CONFIG: &str = r#"{
  "seed": 3,
  "domains": { "source": ["srcA"], "target": ["tgtB"] },
  "synth": {
    "scenarios": [
      { "scenario_id": "srcA", "nsc": 64, "duration_frames": 320, "seed": 1 },
      { "scenario_id": "tgtB", "nsc": 64, "duration_frames": 320, "seed": 2, "los_gain": 0.3,
        "room": [7.0, 6.0], "tx_pos": [1.0, 1.0], "rx_pos": [6.0, 5.0] }
    ],
    "motion_types": ["static"],
    "counts": [0, 1, 2],
    "max_count": 2
  },
  "preprocess": { "tw": 128, "ts": 64 },
  "train": { "epochs": 1, "batch_size": 4, "val_fraction": 0.25 },
  "distill": { "generations": 1, "epochs": 1, "batch_size": 4 },
  "metatest": { "shots": [2], "queries_per_class": 2, "repeats": 2 }
}"#;

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn missing_config_file() {
    let o = dasecount(&["synth", "--config", "/nonexistent/missing.json", "--out", "/tmp/unused"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("ERROR: config: file not found"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"train": {"epochz": 3}}"#).unwrap();
    let o = dasecount(&["synth", "--config", cfg.to_str().unwrap(), "--out", &p(dir.path(), "d")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("ERROR: config: "), "{}", stderr(&o));
}

#[test]
fn full_workflow_through_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = p(d, "config.json");
    std::fs::write(&cfg, SMOKE_CONFIG).unwrap();
    run_ok(&["synth", "--config", &cfg, "--out", &p(d, "data")]);
    run_ok(&["preprocess", "--config", &cfg, "--in", &p(d, "data"), "--out", &p(d, "store")]);
    run_ok(&["train", "--config", &cfg, "--in", &p(d, "store"), "--out", &p(d, "model")]);
    run_ok(&["distill", "--config", &cfg, "--teacher", &p(d, "model/model.ckpt"), "--in", &p(d, "store"), "--out", &p(d, "distill")]);
    assert!(d.join("distill/gen1.ckpt").exists() && d.join("distill/lineage.json").exists());
    let model = p(d, "distill/selected.ckpt");
    let common = ["--config", &cfg, "--model", &model, "--target", &p(d, "store"), "--out", &p(d, "runs")];
    run_ok(&[&["metatest"][..], &common, &["--task", "tgtB:static", "--shots", "2", "--repeats", "2"]].concat());
    run_ok(&[&["baseline", "--kind", "raw_lr"][..], &common].concat());
    run_ok(&["report", "--in", &p(d, "runs"), "--out", &p(d, "report"), "--format", "csv,json"]);
    let summary = std::fs::read_to_string(d.join("report/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3, "{summary}");
    assert!(d.join("report/summary.json").exists());

    // every class of the target task holds 4 samples
    let o = dasecount(&[&["metatest"][..], &common, &["--shots", "5", "--queries", "1"]].concat());
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.starts_with("ERROR: validation: ") && e.contains("class 0"), "{e}");
}
