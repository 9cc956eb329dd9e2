//! Trains the two-branch CNN feature extractor on the source room and
//! saves a checkpoint.
//!
//! cargo run --release --example train_extractor [work_dir]

mod common;

use dasecount::convnet::load_checkpoint;
use dasecount::pipeline::{self, MODEL_FILE};

fn main() -> dasecount::Result<()> {
    let cfg = common::demo_config();
    let dir = common::work_dir("train");
    pipeline::synth(&cfg, &dir.join("data"))?;
    pipeline::preprocess(&cfg, &dir.join("data"), &dir.join("store"))?;
    let (ex, report) = pipeline::train(&cfg, &dir.join("store"), &dir.join("model"))?;

    println!("epoch  amp_loss amp_val  phd_loss phd_val");
    for (a, p) in report.amp_curve.iter().zip(&report.phd_curve) {
        println!("{:>5}  {:>8.4} {:>7.3}  {:>8.4} {:>7.3}", a.epoch, a.train_loss, a.val_acc, p.train_loss, p.val_acc);
    }
    println!("validation accuracy: amp {:.3}, phd {:.3}", report.val_acc_amp, report.val_acc_phd);
    println!("parameters: amp {}, phd {}", ex.amp.param_count(), ex.phd.param_count());

    let (back, header) = load_checkpoint(&dir.join("model").join(MODEL_FILE))?;
    assert_eq!(back.amp.params(), ex.amp.params());
    println!("checkpoint reloaded: generation {}, amp layer hash {}", back.generation, header.amp.layer_hash);
    Ok(())
}
