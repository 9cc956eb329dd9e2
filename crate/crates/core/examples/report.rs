//! Runs every stage end to end and prints the summary table.
//!
//! cargo run --release --example report [work_dir]

mod common;

use dasecount::pipeline::run_all;

fn main() -> dasecount::Result<()> {
    let cfg = common::demo_config();
    let dir = common::work_dir("report");
    let out = run_all(&cfg, &dir)?;
    println!("selected generation {}", out.lineage.chosen);
    let summary = std::fs::read_to_string(out.report_dir.join("summary.csv")).map_err(|e| dasecount::Error::io(&out.report_dir, e))?;
    print!("{summary}");
    let mut files: Vec<_> = std::fs::read_dir(&out.report_dir)
        .map_err(|e| dasecount::Error::io(&out.report_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.file_name()))
        .collect();
    files.sort();
    println!("{} files in {}", files.len(), out.report_dir.display());
    Ok(())
}
