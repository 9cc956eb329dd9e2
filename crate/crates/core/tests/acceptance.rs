mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use dasecount::config::RunConfig;
use dasecount::convnet::loss::{cross_entropy, distill_loss};
use dasecount::convnet::{build_submodel, FeatureExtractor, FeatureTap, Output};
use dasecount::csi::{load_recording, save_recording, CsiDims, CsiRecording, MotionType, RecordingMeta};
use dasecount::fewshot::{extract_features, ClassifierConfig, FeatureMatrix};
use dasecount::linalg::{softmax_row, Matrix};
use dasecount::pipeline::{run_all, PipelineOutput};
use dasecount::preprocess::{unwrap_in_place, Modality, Sample, SampleShape, SampleSource, SegmentationConfig};
use num_complex::Complex32;
use rand::Rng;

/// Set to `1` to exit non-zero when any criterion fails.
const STRICT_ENV: &str = "ACCEPTANCE_STRICT";

type Check = Result<(bool, String), String>;

struct Line {
    id: &'static str,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn run(id: &'static str, name: &'static str, budget: Duration, f: impl FnOnce() -> Check) -> Line {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    let secs = start.elapsed().as_secs_f64();
    let in_time = start.elapsed() <= budget;
    let timing = format!("{secs:.2} s of {} s", budget.as_secs());
    let (pass, detail) = match outcome {
        Ok((ok, d)) => (ok && in_time, format!("{d}; {timing}{}", if in_time { "" } else { " (over budget)" })),
        Err(e) => (false, format!("panicked: {e}; {timing}")),
    };
    let line = Line { id, name, pass, detail };
    println!("{} [{}] {}: {}", if line.pass { "PASS" } else { "FAIL" }, line.id, line.name, line.detail);
    line
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn parameter_counts() -> Check {
    let amp = build_submodel(6, 9, 0).map_err(|e| e.to_string())?.param_count();
    let phd = build_submodel(4, 9, 0).map_err(|e| e.to_string())?.param_count();
    Ok((amp == 189513 && phd == 188361, format!("amp {amp}, phd {phd}")))
}

fn random_samples(shape: SampleShape, n: usize, classes: usize, seed: u64) -> Vec<Sample> {
    let mut rng = dasecount::seed::rng(seed);
    let len = |layers: usize| layers * shape.tw * shape.nsc;
    (0..n)
        .map(|i| Sample {
            shape,
            amp: (0..len(shape.nrt)).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            phd: (0..len(shape.npd)).map(|_| rng.gen_range(-PI as f32..PI as f32)).collect(),
            label: i % classes,
            source: SampleSource { recording: format!("probe{i}"), segment: 0 },
        })
        .collect()
}

fn shape_chain() -> Check {
    let shape = SampleShape { nrt: 6, npd: 4, tw: 200, nsc: 114 };
    let ex = FeatureExtractor::new(shape, 9, 1).map_err(|e| e.to_string())?;
    let chain: Vec<(usize, usize)> = ex.amp.probe_shapes().iter().map(|&(_, h, w)| (h, w)).collect();
    let chain_ok = chain == [(50, 57), (25, 28), (12, 14), (6, 7), (3, 3), (1, 1)];

    let samples = random_samples(shape, 45, 9, 2);
    let refs: Vec<&Sample> = samples.iter().collect();
    let tap_amp = ex.amp.forward(refs[0].input(Modality::Amp), 1, Output::Tap(FeatureTap::Cnn2)).map_err(|e| e.to_string())?.cols;
    let tap_phd = ex.phd.forward(refs[0].input(Modality::Phd), 1, Output::Tap(FeatureTap::Cnn2)).map_err(|e| e.to_string())?.cols;
    let five: FeatureMatrix = extract_features(&ex, &refs, FeatureTap::Cnn2, Modality::Both, 1).map_err(|e| e.to_string())?;
    let one_idx: Vec<usize> = (0..9).collect();
    let one = five.select(&one_idx).duplicated(5);
    let five = five.duplicated(5);
    let dims = [(five.len(), five.dim()), (one.len(), one.dim())];
    let ok = chain_ok && tap_amp == 576 && tap_phd == 576 && dims == [(225, 1152), (45, 1152)];
    Ok((ok, format!("chain {chain:?}, taps {tap_amp}+{tap_phd}, 5-shot {}x{}, 1-shot {}x{}", dims[0].0, dims[0].1, dims[1].0, dims[1].1)))
}

fn gradient_check() -> Check {
    let e = common::gradient_check_max_rel_err();
    Ok((e <= 1e-3, format!("max relative error {e:.3e}")))
}

fn preprocessing_invariants() -> Check {
    let (mean, std) = common::amp_normalization_worst(100);
    let mut rng = dasecount::seed::rng(4);
    let mut worst_step: f64 = 0.0;
    for _ in 0..100 {
        let mut p: Vec<f64> = (0..114).map(|_| rng.gen_range(-PI..PI)).collect();
        unwrap_in_place(&mut p);
        worst_step = p.windows(2).map(|w| (w[1] - w[0]).abs()).fold(worst_step, f64::max);
    }
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (t, tw, ts) = (rng.gen_range(1..5000), rng.gen_range(1..600), rng.gen_range(1..300));
        let mut expected = 0;
        while expected * ts + tw <= t {
            expected += 1;
        }
        if (SegmentationConfig { tw, ts }).count(t) != expected {
            mismatches += 1;
        }
    }
    let ok = mean <= 1e-5 && std <= 1e-4 && worst_step <= PI && mismatches == 0;
    Ok((ok, format!("mean {mean:.2e}, std-1 {std:.2e}, max unwrapped step {worst_step:.4}, {mismatches} segment-count mismatches")))
}

fn phase_cancellation() -> Check {
    let worst = (0..10).map(common::phase_cancel_gap).fold(0f32, f32::max);
    Ok((worst <= 1e-6, format!("max phd difference {worst:.2e} over 10 seeds")))
}

fn distillation_identities() -> Check {
    let mut rng = dasecount::seed::rng(6);
    let (mut ce_gap, mut kl_worst): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let (n, c) = (rng.gen_range(1..8), rng.gen_range(2..10));
        let logits = Matrix::from_vec(n, c, (0..n * c).map(|_| rng.gen_range(-8.0..8.0)).collect());
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let t = rng.gen_range(0.5..4.0);
        let other: Vec<Vec<f64>> = (0..n).map(|_| softmax_row(&(0..c).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<_>>(), t)).collect();
        let (parts, _) = distill_loss(&logits, &labels, Some(&other), 1.0, t).map_err(|e| e.to_string())?;
        ce_gap = ce_gap.max((parts.total - cross_entropy(&logits, &labels).map_err(|e| e.to_string())?.0).abs());
        let same: Vec<Vec<f64>> = logits.rows_iter().map(|r| softmax_row(r, t)).collect();
        let (parts, _) = distill_loss(&logits, &labels, Some(&same), rng.gen_range(0.0..1.0), t).map_err(|e| e.to_string())?;
        kl_worst = kl_worst.max(parts.kl.abs());
    }
    let lineage = common::tiny_lineage(6);
    let counts: Vec<usize> = lineage.models.iter().map(|m| m.amp.param_count() + m.phd.param_count()).collect();
    let equal = counts.windows(2).all(|w| w[0] == w[1]);
    let ok = ce_gap <= 1e-9 && kl_worst <= 1e-9 && lineage.models.len() == 7 && equal;
    Ok((ok, format!("|alpha=1 - CE| {ce_gap:.1e}, KL(self) {kl_worst:.1e}, {} extractors, equal sizes {equal}", lineage.models.len())))
}

fn duplication_invariance() -> Check {
    let mut rng = dasecount::seed::rng(8);
    let (n, d) = (45, 1152);
    let rows = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(0.0..2.0)).collect());
    let f = FeatureMatrix { rows, labels: (0..n).map(|i| i % 9).collect(), tap: None, modality: Modality::Both, duplication: 1 };
    let gap = common::duplication_gap(&f, &ClassifierConfig::default());
    Ok((gap <= 1e-9, format!("max weight difference {gap:.2e} on {n}x{d}, 9 classes")))
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn method_mean(out: &PipelineOutput, method: &str, shots: usize) -> f64 {
    mean(out.reports.iter().filter(|r| r.method == method && r.shots == shots).map(|r| r.mean_acc))
}

fn source_accuracy(out: &PipelineOutput) -> Check {
    let s = &out.lineage.stats[out.lineage.chosen];
    let ok = s.val_acc_combined >= 0.90;
    Ok((
        ok,
        format!(
            "generation {} val acc {:.3} (amp {:.3}, phd {:.3}); generation 0 amp {:.3}, phd {:.3}",
            s.generation, s.val_acc_combined, s.val_acc_amp, s.val_acc_phd, out.train_report.val_acc_amp, out.train_report.val_acc_phd
        ),
    ))
}

fn margins(out: &PipelineOutput) -> Check {
    let ours = method_mean(out, "dasecount", 5);
    let direct = method_mean(out, "direct_transfer_amp", 5).max(method_mean(out, "direct_transfer_phd", 5));
    let raw = method_mean(out, "raw_lr", 5);
    let ok = ours - direct >= 0.20 && ours - raw >= 0.10;
    Ok((ok, format!("5-shot mean {ours:.3}, best direct transfer {direct:.3}, raw LR {raw:.3}")))
}

fn shot_ordering(out: &PipelineOutput) -> Check {
    let mut detail = Vec::new();
    let mut ok = true;
    for r5 in out.reports.iter().filter(|r| r.method == "dasecount" && r.shots == 5) {
        let r1 =
            out.reports.iter().find(|r| r.method == "dasecount" && r.shots == 1 && r.task_id == r5.task_id).ok_or("no 1-shot report")?;
        let paired = r1.repeats.iter().zip(&r5.repeats).all(|(a, b)| a.seed == b.seed);
        ok &= paired && r5.mean_acc >= r1.mean_acc;
        detail.push(format!("{} {:.3} vs {:.3}", r5.task_id, r5.mean_acc, r1.mean_acc));
    }
    Ok((ok && !detail.is_empty(), format!("5-shot vs 1-shot: {}", detail.join(", "))))
}

fn report_tables(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism(first: &PipelineOutput, cfg: &RunConfig) -> Check {
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let second = run_all(cfg, work.path()).map_err(|e| e.to_string())?;
    let (a, b) = (report_tables(&first.report_dir), report_tables(&second.report_dir));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    let ok = !a.is_empty() && a == b && names.contains(&"summary.csv");
    Ok((ok, format!("{} CSV files compared, identical {}", a.len(), a == b)))
}

fn any_f32(rng: &mut impl Rng) -> f32 {
    loop {
        let v = match rng.gen_range(0..3) {
            0 => f32::from_bits(rng.gen()),
            1 => f32::from_bits(rng.gen_range(0..0x0080_0000)),
            _ => -f32::from_bits(rng.gen_range(0..0x0080_0000)),
        };
        if !v.is_nan() {
            return v;
        }
    }
}

fn io_round_trip() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = dasecount::seed::rng(10);
    let mut exact = 0;
    let mut subnormals = 0;
    for i in 0..100 {
        let dims = CsiDims::new(rng.gen_range(1..40), rng.gen_range(2..4), rng.gen_range(1..3), rng.gen_range(1..64));
        let data: Vec<Complex32> = (0..dims.len()).map(|_| Complex32::new(any_f32(&mut rng), any_f32(&mut rng))).collect();
        subnormals += data.iter().filter(|c| c.re.is_subnormal() || c.im.is_subnormal()).count();
        let meta = RecordingMeta {
            scenario_id: format!("room{i}"),
            motion_type: MotionType::ALL[i % 3],
            crowd_count: rng.gen_range(0..9),
            sample_rate: 100.0,
            seed: Some(rng.gen()),
        };
        let rec = CsiRecording::new(dims, data, meta).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("r{i}.csir"));
        save_recording(&rec, &path).map_err(|e| e.to_string())?;
        if load_recording(&path).map_err(|e| e.to_string())?.bit_eq(&rec) {
            exact += 1;
        }
    }
    Ok((exact == 100 && subnormals > 0, format!("{exact}/100 bit-exact, {subnormals} subnormal entries")))
}

fn main() {
    let mut lines = vec![
        run("1", "parameter counts", secs(1), parameter_counts),
        run("2", "shape chain and support matrices", secs(1), shape_chain),
        run("3", "gradient check", secs(30), gradient_check),
        run("4", "preprocessing invariants", secs(30), preprocessing_invariants),
        run("5", "phase impairment cancellation", secs(60), phase_cancellation),
        run("6", "distillation identities", secs(60), distillation_identities),
        run("7", "duplication invariance", secs(10), duplication_invariance),
    ];

    let cfg_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/small.json");
    let cfg = RunConfig::load(&cfg_path).expect("bundled config");
    let work = tempfile::tempdir().expect("temp dir");
    let start = Instant::now();
    let first = run_all(&cfg, work.path());
    let elapsed = start.elapsed();
    match &first {
        Ok(out) => {
            let budget = secs(30 * 60);
            lines.push(run("8a", "source validation accuracy", budget, || source_accuracy(out)));
            lines.push(run("8b", "margins over baselines", budget, || margins(out)));
            lines.push(run("8c", "5-shot not below 1-shot", budget, || shot_ordering(out)));
            lines.push(run("8d", "end-to-end runtime", budget, || {
                Ok((elapsed <= budget, format!("pipeline took {:.1} min", elapsed.as_secs_f64() / 60.0)))
            }));
            lines.push(run("9", "determinism", budget, || determinism(out, &cfg)));
        }
        Err(e) => {
            for (id, name) in [("8", "end-to-end run"), ("9", "determinism")] {
                println!("FAIL [{id}] {name}: pipeline error: {e}");
                lines.push(Line { id, name, pass: false, detail: e.to_string() });
            }
        }
    }
    lines.push(run("10", "recording round trip", secs(10), io_round_trip));

    let failed: Vec<String> = lines.iter().filter(|l| !l.pass).map(|l| format!("{} ({})", l.id, l.name)).collect();
    println!("{} of {} criteria passed", lines.len() - failed.len(), lines.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        if std::env::var_os(STRICT_ENV).is_some_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
