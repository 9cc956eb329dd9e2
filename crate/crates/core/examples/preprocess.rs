//! Segments one synthetic recording and runs the amplitude and phase
//! difference pipelines on its first window.
//!
//! cargo run --release --example preprocess

use dasecount::csi::MotionType;
use dasecount::preprocess::{amp_pipeline, phd_pipeline, segment, SegmentationConfig};
use dasecount::synth::{generate_recording, CrowdMotionConfig, ImpairmentConfig, SceneConfig};

fn layer_stats(v: &[f32]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn main() -> dasecount::Result<()> {
    let scene = SceneConfig { nsc: 64, ..Default::default() };
    let rec = generate_recording(&scene, &CrowdMotionConfig::default(), &ImpairmentConfig::default(), MotionType::Dynamic, 3, 600, 1)?;
    let cfg = SegmentationConfig { tw: 128, ts: 64 };
    let segs = segment(&rec, &cfg)?;
    println!("{} frames -> {} segments of {} (expected {})", rec.dims.t, segs.len(), cfg.tw, cfg.count(rec.dims.t));

    let amp = amp_pipeline(&segs[0])?;
    let phd = phd_pipeline(&segs[0])?;
    let plane = cfg.tw * scene.nsc;
    println!("amp: {} layers of {}x{}", amp.len() / plane, cfg.tw, scene.nsc);
    for (i, layer) in amp.chunks(plane).enumerate() {
        let (m, s) = layer_stats(layer);
        println!("  layer {i}: mean {m:+.2e} std {s:.5}");
    }
    println!("phd: {} layers", phd.len() / plane);
    for (i, layer) in phd.chunks(plane).enumerate() {
        let (lo, hi) = layer.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        println!("  layer {i}: range [{lo:.3}, {hi:.3}] rad");
    }
    Ok(())
}
