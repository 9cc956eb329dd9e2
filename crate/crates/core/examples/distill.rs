//! Trains generation 0 briefly, then distills a lineage where each
//! generation learns from the previous one's soft labels.
//!
//! cargo run --release --example distill

mod common;

use dasecount::convnet::{train_extractor, Split};
use dasecount::distill::{distill_lineage, select_generation, Selection};
use dasecount::pipeline;
use dasecount::preprocess::Sample;

fn main() -> dasecount::Result<()> {
    let cfg = common::demo_config();
    let dir = common::work_dir("distill");
    pipeline::synth(&cfg, &dir.join("data"))?;
    let store = pipeline::preprocess(&cfg, &dir.join("data"), &dir.join("store"))?;
    let source = pipeline::source_scenarios(&cfg, &store)?;
    let samples: Vec<&Sample> = store.merged(Some(&source));

    let train = cfg.effective_train();
    let (gen0, _) = train_extractor(&samples, store.num_classes, &train)?;
    let split = Split::stratified(&samples, train.val_fraction, train.seed);
    let lineage = distill_lineage(&gen0, &samples, &split, &cfg.effective_distill())?;

    for s in &lineage.stats {
        println!(
            "generation {}: val acc amp {:.3} phd {:.3} combined {:.3}",
            s.generation, s.val_acc_amp, s.val_acc_phd, s.val_acc_combined
        );
    }
    let best = select_generation(&lineage, Selection::SourceVal)?;
    println!("selected generation {} of {}", best.generation, lineage.models.len() - 1);
    lineage.save(&dir.join("lineage"))?;
    Ok(())
}
