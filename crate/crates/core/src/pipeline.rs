//! The workflow stages behind each subcommand, operating on directories.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::convnet::{load_checkpoint, save_checkpoint, train_extractor, FeatureExtractor, Split, TrainConfig, TrainReport};
use crate::csi::{load_manifest, DatasetManifest};
use crate::distill::{distill_lineage, select_index, DistillLineage, Selection};
use crate::error::{Error, Result};
use crate::preprocess::{preprocess_dataset, Sample, SampleStore, TaskId};
use crate::report::{emit_report, load_task_reports, run_baseline, run_metatest, BaselineKind, Protocol, TaskReport};
use crate::synth::generate_dataset;

pub const MODEL_FILE: &str = "model.ckpt";
pub const SELECTED_FILE: &str = "selected.ckpt";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";

/// What a source checkpoint records about how it was trained; enough to
/// rebuild the training sample list and split for distillation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainProvenance {
    pub train: TrainConfig,
    pub source_scenarios: Vec<String>,
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<DatasetManifest> {
    let m = generate_dataset(&cfg.synth, cfg.synth_seed(), out)?;
    log::info!("wrote {} recordings to {}", m.recordings.len(), out.display());
    Ok(m)
}

pub fn preprocess(cfg: &RunConfig, input: &Path, out: &Path) -> Result<SampleStore> {
    let manifest = load_manifest(input)?;
    let store = preprocess_dataset(&manifest, input, &cfg.preprocess)?;
    store.save(out)?;
    log::info!("wrote {} samples in {} tasks to {}", store.len(), store.tasks.len(), out.display());
    Ok(store)
}

/// Source scenarios: the configured list, or every scenario that is not a
/// configured target.
pub fn source_scenarios(cfg: &RunConfig, store: &SampleStore) -> Result<Vec<String>> {
    let all = store.scenarios();
    let chosen: Vec<String> = if cfg.domains.source.is_empty() {
        all.iter().filter(|s| !cfg.domains.target.contains(s)).cloned().collect()
    } else {
        cfg.domains.source.clone()
    };
    if let Some(s) = chosen.iter().find(|s| !all.contains(s)) {
        return Err(Error::Validation(format!("source scenario '{s}' not present in the sample store")));
    }
    if chosen.is_empty() {
        return Err(Error::Validation("no source scenarios".into()));
    }
    Ok(chosen)
}

/// Trains generation 0 on the source scenarios and writes `model.ckpt`
/// plus `train_report.json`.
pub fn train(cfg: &RunConfig, store_dir: &Path, out: &Path) -> Result<(FeatureExtractor, TrainReport)> {
    let store = SampleStore::load(store_dir)?;
    let scenarios = source_scenarios(cfg, &store)?;
    let samples = store.merged(Some(&scenarios));
    let tc = cfg.effective_train();
    log::info!("training on {} samples from {:?}", samples.len(), scenarios);
    let (ex, report) = train_extractor(&samples, store.num_classes, &tc)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let prov = TrainProvenance { train: tc, source_scenarios: scenarios };
    save_checkpoint(&ex, &serde_json::to_value(&prov)?, &out.join(MODEL_FILE))?;
    write_json(&out.join(TRAIN_REPORT_FILE), &report)?;
    log::info!("source validation accuracy amp {:.3} phd {:.3}", report.val_acc_amp, report.val_acc_phd);
    Ok((ex, report))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n").map_err(|e| Error::io(path, e))
}

fn provenance(header_config: &serde_json::Value, ckpt: &Path) -> Result<TrainProvenance> {
    serde_json::from_value(header_config.clone())
        .map_err(|e| Error::Validation(format!("{} does not record its source training configuration: {e}", ckpt.display())))
}

/// Distills a lineage from a generation-0 checkpoint. The training split
/// is rebuilt from the configuration stored in the checkpoint. Writes the
/// lineage plus `selected.ckpt` (the generation chosen by `selection`).
pub fn distill(cfg: &RunConfig, teacher: &Path, store_dir: &Path, out: &Path, selection: Selection) -> Result<DistillLineage> {
    let (gen0, header) = load_checkpoint(teacher)?;
    let prov = provenance(&header.config, teacher)?;
    let store = SampleStore::load(store_dir)?;
    let samples: Vec<&Sample> = store.merged(Some(&prov.source_scenarios));
    let split = Split::stratified(&samples, prov.train.val_fraction, prov.train.seed);
    let mut lineage = distill_lineage(&gen0, &samples, &split, &cfg.effective_distill())?;
    lineage.chosen = select_index(&lineage.stats, selection)?;
    lineage.save(out)?;
    let chosen = &lineage.models[lineage.chosen];
    save_checkpoint(chosen, &header.config, &out.join(SELECTED_FILE))?;
    log::info!("selected generation {}", lineage.chosen);
    Ok(lineage)
}

/// Target tasks: explicit ids, else every task of the configured target
/// scenarios, else every task outside the checkpoint's source scenarios.
pub fn target_tasks(cfg: &RunConfig, store: &SampleStore, explicit: &[TaskId], source: &[String]) -> Result<Vec<TaskId>> {
    let tasks: Vec<TaskId> = if !explicit.is_empty() {
        explicit.to_vec()
    } else if !cfg.domains.target.is_empty() {
        store.tasks.keys().filter(|t| cfg.domains.target.contains(&t.scenario_id)).cloned().collect()
    } else {
        store.tasks.keys().filter(|t| !source.contains(&t.scenario_id)).cloned().collect()
    };
    if tasks.is_empty() {
        return Err(Error::Validation("no target tasks".into()));
    }
    for t in &tasks {
        store.task(t)?;
    }
    Ok(tasks)
}

/// Runs the few-shot protocol (or a baseline) on each target task and
/// writes one `task_*.json` per task into `out`.
pub fn metatest(
    model: &Path,
    target_dir: &Path,
    tasks: &[TaskId],
    cfg: &RunConfig,
    protocol: &Protocol,
    baseline: Option<BaselineKind>,
    out: &Path,
) -> Result<Vec<TaskReport>> {
    let (ex, header) = load_checkpoint(model)?;
    let source = provenance(&header.config, model).map(|p| p.source_scenarios).unwrap_or_default();
    let store = SampleStore::load(target_dir)?;
    let tasks = target_tasks(cfg, &store, tasks, &source)?;
    evaluate_tasks(&ex, &store, &tasks, protocol, baseline, out)
}

fn evaluate_tasks(
    ex: &FeatureExtractor,
    store: &SampleStore,
    tasks: &[TaskId],
    protocol: &Protocol,
    baseline: Option<BaselineKind>,
    out: &Path,
) -> Result<Vec<TaskReport>> {
    let mut reports = Vec::new();
    for t in tasks {
        let r = match baseline {
            None => run_metatest(ex, store, t, protocol)?,
            Some(kind) => run_baseline(kind, ex, store, t, protocol)?,
        };
        log::info!("{} {} {}-shot: mean acc {:.4} (std {:.4})", t, r.method, r.shots, r.mean_acc, r.std_acc);
        r.save(out)?;
        reports.push(r);
    }
    Ok(reports)
}

pub fn report(input: &Path, out: &Path, formats: &BTreeSet<crate::report::ReportFormat>) -> Result<Vec<PathBuf>> {
    let reports = load_task_reports(input)?;
    emit_report(&reports, out, formats)
}

/// Paths produced by [`run_all`].
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub data_dir: PathBuf,
    pub store_dir: PathBuf,
    pub model_dir: PathBuf,
    pub distill_dir: PathBuf,
    pub runs_dir: PathBuf,
    pub report_dir: PathBuf,
    pub train_report: TrainReport,
    pub lineage: DistillLineage,
    pub reports: Vec<TaskReport>,
}

/// Every stage in order under `work`: synthetic data, preprocessing,
/// source training, distillation, few-shot evaluation for each configured
/// shot count plus the configured baselines, and the report.
pub fn run_all(cfg: &RunConfig, work: &Path) -> Result<PipelineOutput> {
    cfg.validate()?;
    let data_dir = work.join("data");
    let store_dir = work.join("store");
    let model_dir = work.join("model");
    let distill_dir = work.join("distill");
    let runs_dir = work.join("runs");
    let report_dir = work.join("report");
    synth(cfg, &data_dir)?;
    preprocess(cfg, &data_dir, &store_dir)?;
    let (_, train_report) = train(cfg, &store_dir, &model_dir)?;
    let lineage = distill(cfg, &model_dir.join(MODEL_FILE), &store_dir, &distill_dir, cfg.metatest.selection)?;
    let (ex, _) = load_checkpoint(&distill_dir.join(SELECTED_FILE))?;
    let store = SampleStore::load(&store_dir)?;
    let source: Vec<String> = source_scenarios(cfg, &store)?;
    let tasks = target_tasks(cfg, &store, &[], &source)?;
    let mut reports = Vec::new();
    for &k in &cfg.metatest.shots {
        let p = cfg.protocol(k);
        reports.extend(evaluate_tasks(&ex, &store, &tasks, &p, None, &runs_dir)?);
        for &b in &cfg.metatest.baselines {
            reports.extend(evaluate_tasks(&ex, &store, &tasks, &p, Some(b), &runs_dir)?);
        }
    }
    let formats = cfg.report.formats.iter().copied().collect();
    emit_report(&reports, &report_dir, &formats)?;
    Ok(PipelineOutput { data_dir, store_dir, model_dir, distill_dir, runs_dir, report_dir, train_report, lineage, reports })
}
