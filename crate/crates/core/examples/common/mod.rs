#![allow(dead_code)]

use std::path::PathBuf;

use dasecount::config::{Domains, RunConfig};
use dasecount::csi::MotionType;
use dasecount::synth::SceneConfig;

/// A two-room configuration small enough to run in under a minute:
/// 64 subcarriers, crowd counts 0..=3, 9 segments per recording.
pub fn demo_config() -> RunConfig {
    let mut cfg = RunConfig { seed: 7, ..Default::default() };
    cfg.domains = Domains { source: vec!["roomA-LOS".into()], target: vec!["roomB-NLOS".into()] };
    cfg.synth.scenarios = vec![
        SceneConfig { scenario_id: "roomA-LOS".into(), nsc: 64, seed: 11, ..Default::default() },
        SceneConfig {
            scenario_id: "roomB-NLOS".into(),
            nsc: 64,
            seed: 23,
            los_gain: 0.3,
            static_path_gain: 0.8,
            room: [8.0, 6.0],
            tx_pos: [1.0, 1.0],
            rx_pos: [7.0, 5.0],
            ..Default::default()
        },
    ];
    cfg.synth.motion_types = vec![MotionType::Static, MotionType::Dynamic];
    cfg.synth.counts = (0..=3).collect();
    cfg.synth.max_count = 3;
    cfg.synth.duration_frames = 384;
    cfg.preprocess.tw = 128;
    cfg.preprocess.ts = 32;
    cfg.train.epochs = 4;
    cfg.train.batch_size = 8;
    cfg.train.val_fraction = 0.25;
    cfg.distill.generations = 2;
    cfg.distill.epochs = 4;
    cfg.distill.batch_size = 8;
    cfg.distill.learning_rate = 0.05;
    cfg.metatest.shots = vec![1, 3];
    cfg.metatest.queries_per_class = 4;
    cfg.metatest.repeats = 5;
    cfg
}

/// First command-line argument, or a fresh directory under the system
/// temp dir.
pub fn work_dir(name: &str) -> PathBuf {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join(format!("dasecount-{name}")));
    std::fs::create_dir_all(&dir).expect("create work dir");
    dir
}
