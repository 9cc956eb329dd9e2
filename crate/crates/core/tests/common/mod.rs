#![allow(dead_code)]

use std::collections::BTreeMap;

use dasecount::convnet::{ArchSpec, CnnSubmodel, FeatureExtractor, ForwardCache, Split};
use dasecount::csi::{CsiDims, MotionType};
use dasecount::distill::{distill_lineage, DistillConfig, DistillLineage};
use dasecount::fewshot::{train_classifier, ClassifierConfig, ClassifierModel, FeatureMatrix};
use dasecount::linalg::Matrix;
use dasecount::preprocess::{
    amp_pipeline, phd_pipeline, segment, Sample, SampleShape, SampleSource, SampleStore, Segment, SegmentationConfig, TaskId,
};
use dasecount::synth::{generate_recording, CrowdMotionConfig, ImpairmentConfig, SceneConfig};
use num_complex::Complex32;
use rand::Rng;

pub const TINY_SHAPE: SampleShape = SampleShape { nrt: 2, npd: 1, tw: 8, nsc: 8 };

pub fn tiny_arch(c_in: usize, num_classes: usize) -> ArchSpec {
    ArchSpec { c_in, num_classes, channels: 4, pools: vec![(2, 2), (2, 2)], input_hw: (8, 8) }
}

pub fn tiny_extractor(num_classes: usize, seed: u64) -> FeatureExtractor {
    FeatureExtractor {
        amp: CnnSubmodel::new(tiny_arch(TINY_SHAPE.nrt, num_classes), seed).unwrap(),
        phd: CnnSubmodel::new(tiny_arch(TINY_SHAPE.npd, num_classes), seed + 1).unwrap(),
        generation: 0,
    }
}

/// Samples whose tensors carry a class-dependent bump plus noise.
pub fn tiny_samples(num_classes: usize, per_class: usize, noise: f32, seed: u64) -> Vec<Sample> {
    let mut rng = dasecount::seed::rng(seed);
    let mut out = Vec::new();
    for i in 0..per_class {
        for c in 0..num_classes {
            let mut tensor = |layers: usize| -> Vec<f32> {
                (0..layers * 64)
                    .map(|k| {
                        let (row, col) = ((k % 64) / 8, k % 8);
                        let signal = if row == c % 8 || col == (c * 3) % 8 { 1.5 } else { -0.2 };
                        signal + noise * rng.gen_range(-1.0..1.0f32)
                    })
                    .collect()
            };
            out.push(Sample {
                shape: TINY_SHAPE,
                amp: tensor(TINY_SHAPE.nrt),
                phd: tensor(TINY_SHAPE.npd),
                label: c,
                source: SampleSource { recording: format!("class{c}"), segment: i },
            });
        }
    }
    out
}

pub fn tiny_store(num_classes: usize, per_class: usize, seed: u64) -> SampleStore {
    let mut tasks = BTreeMap::new();
    for (i, m) in MotionType::ALL.into_iter().enumerate() {
        tasks.insert(TaskId::new("roomT", m), tiny_samples(num_classes, per_class, 0.8, seed + i as u64));
    }
    SampleStore { shape: Some(TINY_SHAPE), segmentation: SegmentationConfig { tw: 8, ts: 8 }, num_classes, tasks }
}

/// Seeded random input for `batch` samples of `arch`.
pub fn random_input(arch: &ArchSpec, batch: usize, seed: u64) -> Vec<f64> {
    let mut rng = dasecount::seed::rng(seed);
    (0..batch * arch.c_in * arch.input_hw.0 * arch.input_hw.1).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Max relative error of backprop against central differences of
/// `L = Σ logits ⊙ R` over every parameter.
pub fn gradient_check_max_rel_err() -> f64 {
    let arch = tiny_arch(2, 3);
    let mut m = CnnSubmodel::<f64>::new(arch.clone(), 5).unwrap();
    let batch = 3;
    let x = random_input(&arch, batch, 9);
    let mut rng = dasecount::seed::rng(10);
    let r: Vec<f64> = (0..batch * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut cache = ForwardCache::new();
    m.forward_train(&x, batch, &mut cache).unwrap();
    let grad = m.backward(&mut cache, &Matrix::from_vec(batch, 3, r.clone()));
    let loss = |m: &mut CnnSubmodel<f64>| {
        let mut c = ForwardCache::new();
        let out = m.forward_train(&x, batch, &mut c).unwrap();
        out.data.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..m.param_count() {
        let p0 = m.params()[i];
        m.params_mut()[i] = p0 + h;
        let up = loss(&mut m);
        m.params_mut()[i] = p0 - h;
        let down = loss(&mut m);
        m.params_mut()[i] = p0;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

/// Per-layer mean and population std of the amplitude output on random
/// segments.
pub fn amp_normalization_worst(n_segments: usize) -> (f64, f64) {
    let mut rng = dasecount::seed::rng(77);
    let (mut worst_mean, mut worst_std): (f64, f64) = (0.0, 0.0);
    for _ in 0..n_segments {
        let dims = CsiDims::new(20, 3, 2, 16);
        let data: Vec<Complex32> = (0..dims.len()).map(|_| Complex32::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect();
        let seg = Segment::new(dims, &data).unwrap();
        let amp = amp_pipeline(&seg).unwrap();
        for layer in amp.chunks(20 * 16) {
            let n = layer.len() as f64;
            let mean = layer.iter().map(|&v| v as f64).sum::<f64>() / n;
            let std = (layer.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
            worst_mean = worst_mean.max(mean.abs());
            worst_std = worst_std.max((std - 1.0).abs());
        }
    }
    (worst_mean, worst_std)
}

/// Max elementwise phd difference between one recording generated with
/// the common per-frame phase on and the same recording with it off.
pub fn phase_cancel_gap(seed: u64) -> f32 {
    let scene = SceneConfig { nsc: 32, snr_db: 25.0, ..Default::default() };
    let gen = |common_phase_offset| {
        let imp = ImpairmentConfig { common_phase_offset, ..Default::default() };
        generate_recording(&scene, &CrowdMotionConfig::default(), &imp, MotionType::Dynamic, 4, 40, seed).unwrap()
    };
    let (on, off) = (gen(true), gen(false));
    let cfg = SegmentationConfig { tw: 40, ts: 40 };
    let a = phd_pipeline(&segment(&on, &cfg).unwrap()[0]).unwrap();
    let b = phd_pipeline(&segment(&off, &cfg).unwrap()[0]).unwrap();
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0f32, f32::max)
}

pub fn tiny_lineage(generations: usize) -> DistillLineage {
    let samples = tiny_samples(3, 6, 0.5, 1);
    let refs: Vec<&Sample> = samples.iter().collect();
    let split = Split::stratified(&refs, 0.34, 2);
    let gen0 = tiny_extractor(3, 3);
    let cfg = DistillConfig { generations, epochs: 2, batch_size: 4, learning_rate: 0.05, ..Default::default() };
    distill_lineage(&gen0, &refs, &split, &cfg).unwrap()
}

/// Max-norm distance between linear weights trained on `f` duplicated
/// ×1 and ×5.
pub fn duplication_gap(f: &FeatureMatrix, cfg: &ClassifierConfig) -> f64 {
    let one = train_classifier(&f.duplicated(1), cfg).unwrap();
    let five = train_classifier(&f.duplicated(5), cfg).unwrap();
    let (ClassifierModel::Lr(a) | ClassifierModel::Svm(a), ClassifierModel::Lr(b) | ClassifierModel::Svm(b)) = (&one.model, &five.model)
    else {
        panic!("nearest neighbour has no weights");
    };
    a.weights.data.iter().zip(&b.weights.data).chain(a.bias.iter().zip(&b.bias)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
