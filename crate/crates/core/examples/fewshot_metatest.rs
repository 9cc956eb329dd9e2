//! Freezes a source-trained extractor and fits few-shot classifiers on
//! the target room, next to the direct transfer and raw-feature
//! baselines.
//!
//! cargo run --release --example fewshot_metatest

mod common;

use dasecount::convnet::train_extractor;
use dasecount::fewshot::{classify, extract_features, sample_episode, train_classifier, ClassifierKind};
use dasecount::pipeline;
use dasecount::preprocess::Sample;
use dasecount::report::{run_baseline, run_metatest, BaselineKind};

fn main() -> dasecount::Result<()> {
    let cfg = common::demo_config();
    let dir = common::work_dir("metatest");
    pipeline::synth(&cfg, &dir.join("data"))?;
    let store = pipeline::preprocess(&cfg, &dir.join("data"), &dir.join("store"))?;
    let source = pipeline::source_scenarios(&cfg, &store)?;
    let samples: Vec<&Sample> = store.merged(Some(&source));
    let (ex, _) = train_extractor(&samples, store.num_classes, &cfg.effective_train())?;
    let tasks = pipeline::target_tasks(&cfg, &store, &[], &source)?;

    // one episode by hand
    let p = cfg.protocol(3);
    let e = sample_episode(&store, &tasks[0], p.shots, p.queries_per_class, p.repeat_seed(0))?;
    let support = extract_features(&ex, &e.support, p.tap, p.modality, p.classifier.duplication_factor)?;
    let query = extract_features(&ex, &e.query, p.tap, p.modality, 1)?;
    println!("{}: support {}x{}, query {}x{}", tasks[0], support.len(), support.dim(), query.len(), query.dim());
    for kind in [ClassifierKind::Lr, ClassifierKind::LinearSvm, ClassifierKind::NearestNeighbor] {
        let clf = train_classifier(&support, &dasecount::fewshot::ClassifierConfig { kind, ..p.classifier.clone() })?;
        let pred = classify(&clf, &query)?;
        let hits = pred.labels.iter().zip(&query.labels).filter(|(a, b)| a == b).count();
        println!("  {kind}: {hits}/{} correct", query.len());
    }

    // the full protocol over every target task
    for &k in &cfg.metatest.shots {
        let p = cfg.protocol(k);
        for t in &tasks {
            let ours = run_metatest(&ex, &store, t, &p)?;
            let direct = run_baseline(BaselineKind::DirectTransferAmp, &ex, &store, t, &p)?;
            let raw = run_baseline(BaselineKind::RawLr, &ex, &store, t, &p)?;
            println!(
                "{t} {k}-shot: few-shot {:.3}±{:.3}  direct {:.3}  raw {:.3}",
                ours.mean_acc, ours.std_acc, direct.mean_acc, raw.mean_acc
            );
        }
    }
    Ok(())
}
