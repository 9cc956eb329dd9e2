//! Generates a small two-room CSI dataset and inspects one recording.
//!
//! cargo run --release --example synth_dataset [out_dir]

mod common;

use dasecount::csi::load_manifest;

fn main() -> dasecount::Result<()> {
    let cfg = common::demo_config();
    let out = common::work_dir("synth");
    let manifest = dasecount::pipeline::synth(&cfg, &out)?;
    println!("{} recordings in {}", manifest.recordings.len(), out.display());

    let manifest = load_manifest(&out)?;
    let entry = &manifest.recordings[0];
    let rec = manifest.load_entry(&out, entry)?;
    let d = rec.dims;
    println!("{}: T={} Nr={} Nt={} Nsc={}", entry.path, d.t, d.nr, d.nt, d.nsc);

    // mean channel power per receive antenna
    for rx in 0..d.nr {
        let mut p = 0.0;
        for t in 0..d.t {
            for tx in 0..d.nt {
                for sc in 0..d.nsc {
                    p += rec.at(t, rx, tx, sc).norm_sqr() as f64;
                }
            }
        }
        println!("  rx{rx} mean power {:.4}", p / (d.t * d.nt * d.nsc) as f64);
    }
    Ok(())
}
