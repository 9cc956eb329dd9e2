//! Repeated few-shot trials, baselines, and the CSV/JSON result tables.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convnet::{infer, inference_view, FeatureExtractor, FeatureTap, Output};
use crate::csi::MotionType;
use crate::error::{Error, Result};
use crate::fewshot::{self, episode_indices, ClassifierConfig, ClassifierKind, FeatureMatrix};
use crate::linalg::argmax;
use crate::preprocess::{Modality, Sample, SampleStore, TaskId};
use crate::seed;

pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";
/// Prefix of the per-run report files that `metatest`/`baseline` write and
/// `report` collects.
pub const TASK_REPORT_PREFIX: &str = "task_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Protocol {
    pub shots: usize,
    pub queries_per_class: usize,
    pub repeats: usize,
    pub tap: FeatureTap,
    pub modality: Modality,
    pub classifier: ClassifierConfig,
    pub seed: u64,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            shots: 5,
            queries_per_class: 20,
            repeats: 10,
            tap: FeatureTap::Cnn2,
            modality: Modality::Both,
            classifier: ClassifierConfig::default(),
            seed: 0,
        }
    }
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        if self.shots < 1 {
            return Err(Error::Config("metatest.shots must be >= 1".into()));
        }
        if self.queries_per_class < 1 {
            return Err(Error::Config("metatest.queries_per_class must be >= 1".into()));
        }
        if self.repeats < 1 {
            return Err(Error::Config("metatest.repeats must be >= 1".into()));
        }
        self.classifier.validate()
    }

    /// Episode seed for repeat `r`. Independent of shots, tap, modality and
    /// classifier, so different configurations see the same draws.
    pub fn repeat_seed(&self, r: usize) -> u64 {
        seed::derive_indexed(self.seed, "repeat", r as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    DirectTransferAmp,
    DirectTransferPhd,
    RawLr,
    AmpOnly,
    PhdOnly,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::DirectTransferAmp,
        BaselineKind::DirectTransferPhd,
        BaselineKind::RawLr,
        BaselineKind::AmpOnly,
        BaselineKind::PhdOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::DirectTransferAmp => "direct_transfer_amp",
            BaselineKind::DirectTransferPhd => "direct_transfer_phd",
            BaselineKind::RawLr => "raw_lr",
            BaselineKind::AmpOnly => "amp_only",
            BaselineKind::PhdOnly => "phd_only",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm || format!("{k:?}").to_ascii_lowercase() == norm.replace('_', ""))
            .ok_or_else(|| Error::Config(format!("unknown baseline kind '{s}'")))
    }
}

/// One repeat of a protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: usize,
    pub seed: u64,
    pub accuracy: f64,
    /// Raw counts, rows = true class, columns = predicted class.
    pub confusion_counts: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: TaskId,
    /// `dasecount` or a baseline name.
    pub method: String,
    /// Summary-table columns. For baselines without a feature tap the tap
    /// column reads `fc` (direct transfer) or `raw`, and the classifier
    /// column reads `direct` for direct transfer.
    pub shots: usize,
    pub tap: String,
    pub modality: Modality,
    pub classifier: String,
    pub repeats: Vec<RepeatResult>,
    pub mean_acc: f64,
    pub std_acc: f64,
    /// Mean over repeats of the row-normalized confusion matrices.
    pub confusion: Vec<Vec<f64>>,
    pub protocol: Protocol,
}

impl TaskReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.repeats.iter().map(|r| r.accuracy).collect()
    }

    /// File stem shared by the confusion CSV and the per-run JSON.
    pub fn stem(&self) -> String {
        let sid: String =
            self.task_id.scenario_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
        format!("{sid}_{}_{}_k{}", self.task_id.motion_type, self.method, self.shots)
    }

    fn sort_key(&self) -> (String, usize, String, String, String) {
        (self.task_id.to_string(), self.shots, self.method.clone(), self.modality.to_string(), self.tap.clone())
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{TASK_REPORT_PREFIX}{}.json", self.stem()));
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Query predictor for one repeat: support and query indices into the
/// task's samples in, predicted labels for the query out.
pub trait Predictor: Sync {
    fn predict(&self, support: &[usize], query: &[usize]) -> Result<Vec<usize>>;
}

impl<F> Predictor for F
where
    F: Fn(&[usize], &[usize]) -> Result<Vec<usize>> + Sync,
{
    fn predict(&self, support: &[usize], query: &[usize]) -> Result<Vec<usize>> {
        self(support, query)
    }
}

struct Labels<'a> {
    tap: String,
    modality: Modality,
    classifier: String,
    method: String,
    task_id: &'a TaskId,
}

/// Runs every repeat of `protocol` on one task with an arbitrary predictor
/// and aggregates the results.
fn run_repeats(
    samples: &[Sample],
    num_classes: usize,
    protocol: &Protocol,
    predictor: &dyn Predictor,
    labels: Labels,
) -> Result<TaskReport> {
    protocol.validate()?;
    let repeats: Vec<RepeatResult> = (0..protocol.repeats)
        .into_par_iter()
        .map(|r| -> Result<RepeatResult> {
            let seed = protocol.repeat_seed(r);
            let (support, query) = episode_indices(samples, num_classes, protocol.shots, protocol.queries_per_class, seed)?;
            let pred = predictor.predict(&support, &query)?;
            if pred.len() != query.len() {
                return Err(Error::Shape(format!("{} predictions for {} queries", pred.len(), query.len())));
            }
            let mut counts = vec![vec![0u64; num_classes]; num_classes];
            let mut correct = 0usize;
            for (&qi, &p) in query.iter().zip(&pred) {
                let y = samples[qi].label;
                if p >= num_classes {
                    return Err(Error::Range(format!("predicted class {p} outside 0..{num_classes}")));
                }
                counts[y][p] += 1;
                correct += (y == p) as usize;
            }
            Ok(RepeatResult { repeat: r, seed, accuracy: correct as f64 / query.len() as f64, confusion_counts: counts })
        })
        .enumerate()
        .map(|(r, res)| res.map_err(|e| e.context(format!("task {} repeat {r}", labels.task_id))))
        .collect::<Result<_>>()?;

    let n = repeats.len() as f64;
    let accs: Vec<f64> = repeats.iter().map(|r| r.accuracy).collect();
    let mean = accs.iter().sum::<f64>() / n;
    let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut confusion = vec![vec![0.0; num_classes]; num_classes];
    for rep in &repeats {
        for (row, counts) in confusion.iter_mut().zip(&rep.confusion_counts) {
            let total: u64 = counts.iter().sum();
            for (c, &k) in row.iter_mut().zip(counts) {
                *c += k as f64 / total as f64 / n;
            }
        }
    }
    Ok(TaskReport {
        task_id: labels.task_id.clone(),
        method: labels.method,
        shots: protocol.shots,
        tap: labels.tap,
        modality: labels.modality,
        classifier: labels.classifier,
        repeats,
        mean_acc: mean,
        std_acc: std,
        confusion,
        protocol: protocol.clone(),
    })
}

/// Repeats with a caller-supplied predictor (used for oracles in tests and
/// for custom classifiers).
pub fn run_with_predictor(
    store: &SampleStore,
    task_id: &TaskId,
    protocol: &Protocol,
    method: &str,
    predictor: &dyn Predictor,
) -> Result<TaskReport> {
    let samples = store.task(task_id)?;
    let labels = Labels {
        tap: protocol.tap.as_str().to_string(),
        modality: protocol.modality,
        classifier: protocol.classifier.kind.to_string(),
        method: method.to_string(),
        task_id,
    };
    run_repeats(samples, store.num_classes, protocol, predictor, labels)
}

fn fit_predict_rows(all: &FeatureMatrix, support: &[usize], query: &[usize], cfg: &ClassifierConfig) -> Result<Vec<usize>> {
    let sup = all.select(support).duplicated(cfg.duplication_factor);
    let que = all.select(query);
    Ok(fewshot::fit_predict(&sup, &que, cfg)?.labels)
}

/// Few-shot evaluation of the frozen extractor on one target task.
/// Features of every task sample are extracted once and shared by all
/// repeats; each repeat fits a fresh classifier on its support rows.
pub fn run_metatest(ex: &FeatureExtractor, store: &SampleStore, task_id: &TaskId, protocol: &Protocol) -> Result<TaskReport> {
    protocol.validate()?;
    let samples = store.task(task_id)?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let all = fewshot::extract_features(ex, &refs, protocol.tap, protocol.modality, 1)?;
    let predictor = |s: &[usize], q: &[usize]| fit_predict_rows(&all, s, q, &protocol.classifier);
    run_with_predictor(store, task_id, protocol, "dasecount", &predictor)
}

pub fn run_baseline(
    kind: BaselineKind,
    ex: &FeatureExtractor,
    store: &SampleStore,
    task_id: &TaskId,
    protocol: &Protocol,
) -> Result<TaskReport> {
    protocol.validate()?;
    let samples = store.task(task_id)?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let labels = |tap: &str, modality, classifier: &str| Labels {
        tap: tap.to_string(),
        modality,
        classifier: classifier.to_string(),
        method: kind.as_str().to_string(),
        task_id,
    };
    match kind {
        BaselineKind::DirectTransferAmp | BaselineKind::DirectTransferPhd => {
            let which = if kind == BaselineKind::DirectTransferAmp { Modality::Amp } else { Modality::Phd };
            for s in &refs {
                ex.check_shape(s.shape)?;
            }
            let model = inference_view(ex.submodel(which));
            let idx: Vec<usize> = (0..refs.len()).collect();
            let logits = infer(&model, &refs, which, &idx, Output::Logits)?;
            let pred: Vec<usize> = logits.rows_iter().map(argmax).collect();
            let predictor = |_: &[usize], q: &[usize]| Ok(q.iter().map(|&i| pred[i]).collect());
            run_repeats(samples, store.num_classes, protocol, &predictor, labels("fc", which, "direct"))
        }
        BaselineKind::RawLr => {
            let all = fewshot::raw_features(&refs, 1)?;
            let cfg = ClassifierConfig { kind: ClassifierKind::Lr, ..protocol.classifier.clone() };
            let predictor = |s: &[usize], q: &[usize]| fit_predict_rows(&all, s, q, &cfg);
            run_repeats(samples, store.num_classes, protocol, &predictor, labels("raw", Modality::Both, "lr"))
        }
        BaselineKind::AmpOnly | BaselineKind::PhdOnly => {
            let modality = if kind == BaselineKind::AmpOnly { Modality::Amp } else { Modality::Phd };
            let p = Protocol { modality, ..protocol.clone() };
            let all = fewshot::extract_features(ex, &refs, p.tap, modality, 1)?;
            let predictor = |s: &[usize], q: &[usize]| fit_predict_rows(&all, s, q, &p.classifier);
            let l = labels(p.tap.as_str(), modality, p.classifier.kind.as_str());
            run_repeats(samples, store.num_classes, &p, &predictor, l)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format '{other}' (csv|json)"))),
        }
    }
}

pub fn parse_formats(s: &str) -> Result<BTreeSet<ReportFormat>> {
    let set: BTreeSet<ReportFormat> = s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    if set.is_empty() {
        return Err(Error::Config("no report format given".into()));
    }
    Ok(set)
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    task_id: String,
    motion_type: MotionType,
    shots: usize,
    tap: &'a str,
    modality: Modality,
    classifier: &'a str,
    mean_acc: String,
    std_acc: String,
    repeats: usize,
}

/// Writes the summary tables and confusion matrices. Returns the written
/// paths in write order.
pub fn emit_report(reports: &[TaskReport], out_dir: &Path, formats: &BTreeSet<ReportFormat>) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::Validation("no task reports to emit".into()));
    }
    let mut sorted: Vec<&TaskReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.sort_key());
    for w in sorted.windows(2) {
        if w[0].stem() == w[1].stem() && w[0].sort_key() == w[1].sort_key() {
            return Err(Error::Validation(format!("duplicate report for {}", w[0].stem())));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    if formats.contains(&ReportFormat::Csv) {
        let path = out_dir.join(SUMMARY_CSV);
        let mut w = csv::Writer::from_path(&path).map_err(|e| e.into_io(&path))?;
        for r in &sorted {
            w.serialize(SummaryRow {
                task_id: r.task_id.to_string(),
                motion_type: r.task_id.motion_type,
                shots: r.shots,
                tap: &r.tap,
                modality: r.modality,
                classifier: &r.classifier,
                mean_acc: format!("{:.6}", r.mean_acc),
                std_acc: format!("{:.6}", r.std_acc),
                repeats: r.repeats.len(),
            })?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
        for r in &sorted {
            let path = out_dir.join(format!("confusion_{}.csv", r.stem()));
            let mut w = csv::Writer::from_path(&path).map_err(|e| e.into_io(&path))?;
            let mut header = vec!["true\\pred".to_string()];
            header.extend((0..r.confusion.len()).map(|c| c.to_string()));
            w.write_record(&header)?;
            for (i, row) in r.confusion.iter().enumerate() {
                let mut rec = vec![i.to_string()];
                rec.extend(row.iter().map(|v| format!("{v:.6}")));
                w.write_record(&rec)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    if formats.contains(&ReportFormat::Json) {
        let path = out_dir.join(SUMMARY_JSON);
        let doc = serde_json::json!({ "reports": sorted });
        fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n").map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

trait IntoIo {
    fn into_io(self, path: &Path) -> Error;
}

impl IntoIo for csv::Error {
    fn into_io(self, path: &Path) -> Error {
        if let csv::ErrorKind::Io(_) = self.kind() {
            if let csv::ErrorKind::Io(e) = self.into_kind() {
                return Error::io(path, e);
            }
            unreachable!()
        }
        Error::Csv(self)
    }
}

/// Reads every `task_*.json` in `dir`, sorted by file name.
pub fn load_task_reports(dir: &Path) -> Result<Vec<TaskReport>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(TASK_REPORT_PREFIX))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Validation(format!("no {TASK_REPORT_PREFIX}*.json reports in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::from(e).context(p.display().to_string()))
        })
        .collect()
}
