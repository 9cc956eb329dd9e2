//! Target-domain few-shot classification on frozen extractor features.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convnet::{infer, inference_view, FeatureExtractor, FeatureTap, Output};
use crate::error::{Error, Result};
use crate::linalg::{argmax, matmul, softmax_row, Matrix};
use crate::preprocess::{Modality, Sample, SampleStore, TaskId};
use crate::seed;

/// k support and q query samples per class from one task.
#[derive(Clone, Debug)]
pub struct Episode<'a> {
    pub task_id: TaskId,
    pub support: Vec<&'a Sample>,
    pub query: Vec<&'a Sample>,
    /// Positions of `support` / `query` within the task's sample list.
    pub support_idx: Vec<usize>,
    pub query_idx: Vec<usize>,
    pub seed: u64,
}

/// Per class, a seeded shuffle of the task's samples of that class; the
/// first `k` go to support and the next `q` to query. Classes are visited
/// in index order, so both lists are grouped by class.
pub fn sample_episode<'a>(store: &'a SampleStore, task_id: &TaskId, k: usize, q: usize, seed: u64) -> Result<Episode<'a>> {
    let samples = store.task(task_id)?;
    let (support_idx, query_idx) =
        episode_indices(samples, store.num_classes, k, q, seed).map_err(|e| e.context(format!("task {task_id}")))?;
    Ok(Episode {
        task_id: task_id.clone(),
        support: support_idx.iter().map(|&i| &samples[i]).collect(),
        query: query_idx.iter().map(|&i| &samples[i]).collect(),
        support_idx,
        query_idx,
        seed,
    })
}

pub(crate) fn episode_indices(samples: &[Sample], num_classes: usize, k: usize, q: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if k < 1 {
        return Err(Error::Config("shots must be >= 1".into()));
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, s) in samples.iter().enumerate() {
        if s.label >= num_classes {
            return Err(Error::Validation(format!("sample label {} outside the class set", s.label)));
        }
        by_class[s.label].push(i);
    }
    let (mut support, mut query) = (Vec::new(), Vec::new());
    for (c, mut idx) in by_class.into_iter().enumerate() {
        if idx.len() < k + q {
            return Err(Error::Validation(format!("class {c} has {} samples, fewer than shots + queries = {}", idx.len(), k + q)));
        }
        idx.shuffle(&mut seed::rng(seed::derive_indexed(seed, "episode-class", c as u64)));
        support.extend_from_slice(&idx[..k]);
        query.extend_from_slice(&idx[k..k + q]);
    }
    Ok((support, query))
}

/// Rows of features with their labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub rows: Matrix<f64>,
    pub labels: Vec<usize>,
    /// `None` for raw preprocessed tensors.
    pub tap: Option<FeatureTap>,
    pub modality: Modality,
    /// How many consecutive copies of each distinct row are present.
    pub duplication: usize,
}

impl FeatureMatrix {
    pub fn dim(&self) -> usize {
        self.rows.cols
    }

    pub fn len(&self) -> usize {
        self.rows.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows == 0
    }

    /// Repeats every row (and label) `factor` times consecutively.
    pub fn duplicated(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let d = self.dim();
        let mut data = Vec::with_capacity(self.rows.data.len() * factor);
        let mut labels = Vec::with_capacity(self.labels.len() * factor);
        for (r, &y) in self.rows.rows_iter().zip(&self.labels) {
            for _ in 0..factor {
                data.extend_from_slice(r);
                labels.push(y);
            }
        }
        FeatureMatrix {
            rows: Matrix::from_vec(self.len() * factor, d, data),
            labels,
            tap: self.tap,
            modality: self.modality,
            duplication: self.duplication * factor,
        }
    }

    /// Selects rows by index (no duplication).
    pub fn select(&self, idx: &[usize]) -> Self {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.rows.row(i));
        }
        FeatureMatrix {
            rows: Matrix::from_vec(idx.len(), d, data),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            tap: self.tap,
            modality: self.modality,
            duplication: 1,
        }
    }
}

fn tap_matrix(ex: &FeatureExtractor, samples: &[&Sample], which: Modality, tap: FeatureTap) -> Result<Matrix<f32>> {
    let model = inference_view(ex.submodel(which));
    let idx: Vec<usize> = (0..samples.len()).collect();
    // chunks run in parallel; each chunk is a pure inference pass
    let parts: Vec<Matrix<f32>> = idx.par_chunks(16).map(|c| infer(&model, samples, which, c, Output::Tap(tap))).collect::<Result<_>>()?;
    let cols = parts.first().map_or(ex.submodel(which).arch().tap_len(tap), |m| m.cols);
    let data: Vec<f32> = parts.into_iter().flat_map(|m| m.data).collect();
    Ok(Matrix::from_vec(samples.len(), cols, data))
}

/// Frozen-extractor features at `tap`. For `Both` the amplitude features
/// come first. Each row is then repeated `duplication_factor` times.
pub fn extract_features(
    ex: &FeatureExtractor,
    samples: &[&Sample],
    tap: FeatureTap,
    modality: Modality,
    duplication_factor: usize,
) -> Result<FeatureMatrix> {
    for s in samples {
        ex.check_shape(s.shape)?;
    }
    let parts: Vec<Matrix<f32>> = match modality {
        Modality::Both => vec![tap_matrix(ex, samples, Modality::Amp, tap)?, tap_matrix(ex, samples, Modality::Phd, tap)?],
        m => vec![tap_matrix(ex, samples, m, tap)?],
    };
    let d: usize = parts.iter().map(|m| m.cols).sum();
    let mut data = Vec::with_capacity(samples.len() * d);
    for r in 0..samples.len() {
        for p in &parts {
            data.extend(p.row(r).iter().map(|&v| v as f64));
        }
    }
    let fm = FeatureMatrix {
        rows: Matrix::from_vec(samples.len(), d, data),
        labels: samples.iter().map(|s| s.label).collect(),
        tap: Some(tap),
        modality,
        duplication: 1,
    };
    Ok(fm.duplicated(duplication_factor))
}

/// Flattened preprocessed tensors (`amp ‖ phd`) without any extractor.
pub fn raw_features(samples: &[&Sample], duplication_factor: usize) -> Result<FeatureMatrix> {
    let d = samples.first().map_or(0, |s| s.amp.len() + s.phd.len());
    let mut data = Vec::with_capacity(samples.len() * d);
    for s in samples {
        if s.amp.len() + s.phd.len() != d {
            return Err(Error::Shape("raw samples differ in size".into()));
        }
        data.extend(s.amp.iter().chain(&s.phd).map(|&v| v as f64));
    }
    let fm = FeatureMatrix {
        rows: Matrix::from_vec(samples.len(), d, data),
        labels: samples.iter().map(|s| s.label).collect(),
        tap: None,
        modality: Modality::Both,
        duplication: 1,
    };
    Ok(fm.duplicated(duplication_factor))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassifierKind {
    #[serde(rename = "lr")]
    Lr,
    #[serde(rename = "svm")]
    LinearSvm,
    #[serde(rename = "nn")]
    NearestNeighbor,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Lr => "lr",
            ClassifierKind::LinearSvm => "svm",
            ClassifierKind::NearestNeighbor => "nn",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(ClassifierKind::Lr),
            "svm" | "linearsvm" => Ok(ClassifierKind::LinearSvm),
            "nn" | "nearestneighbor" | "knn" => Ok(ClassifierKind::NearestNeighbor),
            other => Err(Error::Config(format!("unknown classifier '{other}' (lr|svm|nn)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the full gradient norm falls below this.
    pub grad_tol: f64,
    pub l2_strength: f64,
    pub duplication_factor: usize,
    pub k_neighbors: usize,
    /// Z-score features with support statistics before fitting.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            kind: ClassifierKind::Lr,
            learning_rate: 1.0,
            max_iters: 1000,
            grad_tol: 1e-6,
            l2_strength: 1.0,
            duplication_factor: 5,
            k_neighbors: 1,
            standardize: false,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("classifier.learning_rate must be > 0".into()));
        }
        if self.duplication_factor < 1 || self.k_neighbors < 1 {
            return Err(Error::Config("classifier.duplication_factor and k_neighbors must be >= 1".into()));
        }
        if !(self.l2_strength >= 0.0) || !(self.grad_tol >= 0.0) {
            return Err(Error::Config("classifier.l2_strength and grad_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Weights `[C × d]` and biases `[C]` of a linear scorer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Matrix<f64>,
    pub bias: Vec<f64>,
    /// Objective value after each accepted iteration.
    pub loss_history: Vec<f64>,
    /// Step size in effect at the end (halved whenever a step increased the
    /// objective).
    pub final_learning_rate: f64,
    pub iterations: usize,
}

impl LinearModel {
    pub fn scores(&self, x: &Matrix<f64>) -> Matrix<f64> {
        let c = self.bias.len();
        let mut out = Matrix::zeros(x.rows, c);
        for r in 0..x.rows {
            out.row_mut(r).copy_from_slice(&self.bias);
        }
        matmul(x.rows, x.cols, c, &x.data, false, &self.weights.data, true, 1.0, &mut out.data);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierModel {
    Lr(LinearModel),
    Svm(LinearModel),
    Nn { rows: Matrix<f64>, labels: Vec<usize>, k: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub model: ClassifierModel,
    pub num_classes: usize,
    pub dim: usize,
    pub tap: Option<FeatureTap>,
    pub modality: Modality,
    /// Per-feature `(mean, std)` when standardizing.
    pub scaling: Option<Vec<(f64, f64)>>,
    pub config: ClassifierConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub labels: Vec<usize>,
    /// Softmax rows (LR only).
    pub probabilities: Option<Matrix<f64>>,
}

fn check_features(f: &FeatureMatrix) -> Result<usize> {
    if f.labels.len() != f.len() {
        return Err(Error::Shape("labels and rows differ in length".into()));
    }
    if f.rows.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite feature value".into()));
    }
    let mut seen = f.labels.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 {
        return Err(Error::Training(format!("classifier needs at least 2 distinct labels, got {}", seen.len())));
    }
    Ok(seen.last().copied().unwrap_or(0) + 1)
}

fn scale(x: &Matrix<f64>, scaling: &[(f64, f64)]) -> Matrix<f64> {
    let mut out = x.clone();
    for r in 0..out.rows {
        for (v, &(m, s)) in out.row_mut(r).iter_mut().zip(scaling) {
            *v = (*v - m) / s;
        }
    }
    out
}

/// Fits the configured classifier on `features`. LR and SVM start from
/// zero weights; everything is deterministic in the inputs.
pub fn train_classifier(features: &FeatureMatrix, cfg: &ClassifierConfig) -> Result<Classifier> {
    cfg.validate()?;
    let num_classes = check_features(features)?;
    let scaling = cfg.standardize.then(|| {
        let n = features.len() as f64;
        (0..features.dim())
            .map(|j| {
                let m = features.rows.rows_iter().map(|r| r[j]).sum::<f64>() / n;
                let v = features.rows.rows_iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
                (m, if v > 0.0 { v.sqrt() } else { 1.0 })
            })
            .collect::<Vec<_>>()
    });
    let x = match &scaling {
        Some(s) => scale(&features.rows, s),
        None => features.rows.clone(),
    };
    let distinct = (features.len() / features.duplication.max(1)).max(1);
    let model = match cfg.kind {
        ClassifierKind::Lr => ClassifierModel::Lr(fit_linear(&x, &features.labels, num_classes, distinct, cfg, Loss::Softmax)),
        ClassifierKind::LinearSvm => ClassifierModel::Svm(fit_linear(&x, &features.labels, num_classes, distinct, cfg, Loss::Hinge)),
        ClassifierKind::NearestNeighbor => ClassifierModel::Nn { rows: x, labels: features.labels.clone(), k: cfg.k_neighbors },
    };
    Ok(Classifier { model, num_classes, dim: features.dim(), tap: features.tap, modality: features.modality, scaling, config: cfg.clone() })
}

pub fn classify(clf: &Classifier, query: &FeatureMatrix) -> Result<Predictions> {
    if query.dim() != clf.dim {
        return Err(Error::Shape(format!("query features have dimension {}, classifier expects {}", query.dim(), clf.dim)));
    }
    let x = match &clf.scaling {
        Some(s) => scale(&query.rows, s),
        None => query.rows.clone(),
    };
    match &clf.model {
        ClassifierModel::Lr(m) => {
            let scores = m.scores(&x);
            let mut probs = Matrix::zeros(scores.rows, scores.cols);
            for r in 0..scores.rows {
                probs.row_mut(r).copy_from_slice(&softmax_row(scores.row(r), 1.0));
            }
            let labels = scores.rows_iter().map(argmax).collect();
            Ok(Predictions { labels, probabilities: Some(probs) })
        }
        ClassifierModel::Svm(m) => Ok(Predictions { labels: m.scores(&x).rows_iter().map(argmax).collect(), probabilities: None }),
        ClassifierModel::Nn { rows, labels, k } => {
            let pred = x
                .rows_iter()
                .map(|q| {
                    let mut d: Vec<(f64, usize)> = rows
                        .rows_iter()
                        .zip(labels)
                        .map(|(r, &y)| (r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), y))
                        .collect();
                    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    let mut votes = vec![0usize; clf.num_classes];
                    for &(_, y) in d.iter().take(*k) {
                        votes[y] += 1;
                    }
                    argmax(&votes)
                })
                .collect();
            Ok(Predictions { labels: pred, probabilities: None })
        }
    }
}

impl Classifier {
    /// Writes `classifier.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = serde_json::json!({
            "kind": self.config.kind,
            "tap": self.tap,
            "modality": self.modality,
            "dims": { "features": self.dim, "classes": self.num_classes },
            "model": self.model,
            "scaling": self.scaling,
            "config": self.config,
        });
        fs::write(path, serde_json::to_string(&doc)? + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Loss {
    Softmax,
    Hinge,
}

/// Full-batch gradient descent on `mean loss + (λ/n)·‖W‖²`, bias
/// unregularized, where `n` counts distinct rows so that duplicating every
/// row leaves the objective unchanged. A step that increases the objective
/// is rejected and retried at half the step size.
///
/// When the feature dimension exceeds the row count, iterates are kept in
/// the span of the rows (`W = C·X`) and every quantity is computed through
/// the Gram matrix; the iterates are the same as the primal ones.
fn fit_linear(x: &Matrix<f64>, labels: &[usize], c: usize, distinct: usize, cfg: &ClassifierConfig, loss: Loss) -> LinearModel {
    let (n, d) = (x.rows, x.cols);
    let lam = cfg.l2_strength / distinct as f64;
    let dual = d > n;
    let gram = if dual {
        let mut g = Matrix::zeros(n, n);
        matmul(n, d, n, &x.data, false, &x.data, true, 0.0, &mut g.data);
        Some(g)
    } else {
        None
    };
    // coefficients: W (C×d) in primal, C (C×n) in dual form
    let m = if dual { n } else { d };
    let mut coef = vec![0.0; c * m];
    let mut bias = vec![0.0; c];
    let obj = |coef: &[f64], bias: &[f64]| -> (f64, Vec<f64>, Vec<f64>, f64) {
        // scores S = X·Wᵀ + b  (n×c)
        let mut s = vec![0.0; n * c];
        for r in 0..n {
            s[r * c..(r + 1) * c].copy_from_slice(bias);
        }
        let (feat, fd) = match &gram {
            Some(g) => (&g.data, n),
            None => (&x.data, d),
        };
        matmul(n, fd, c, feat, false, coef, true, 1.0, &mut s);
        // ‖W‖² = Σ_c w_c·w_c
        let wn = match &gram {
            Some(g) => {
                let mut cg = vec![0.0; c * n];
                matmul(c, n, n, coef, false, &g.data, false, 0.0, &mut cg);
                cg.iter().zip(coef).map(|(a, b)| a * b).sum::<f64>()
            }
            None => coef.iter().map(|v| v * v).sum::<f64>(),
        };
        let (mut total, mut ds) = (0.0, vec![0.0; n * c]);
        for r in 0..n {
            let row = &s[r * c..(r + 1) * c];
            let y = labels[r];
            match loss {
                Loss::Softmax => {
                    let p = softmax_row(row, 1.0);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    total += lse - row[y];
                    for j in 0..c {
                        ds[r * c + j] = (p[j] - if j == y { 1.0 } else { 0.0 }) / n as f64;
                    }
                }
                Loss::Hinge => {
                    for j in 0..c {
                        let t = if j == y { 1.0 } else { -1.0 };
                        let margin = 1.0 - t * row[j];
                        if margin > 0.0 {
                            total += margin;
                            ds[r * c + j] = -t / n as f64;
                        }
                    }
                }
            }
        }
        let value = total / n as f64 + lam * wn;
        // dW = dSᵀ·X + 2λW, expressed in the coefficient space
        let mut gcoef = vec![0.0; c * m];
        if gram.is_some() {
            for r in 0..n {
                for j in 0..c {
                    gcoef[j * n + r] = ds[r * c + j];
                }
            }
        } else {
            matmul(c, n, d, &ds, true, &x.data, false, 0.0, &mut gcoef);
        }
        for (g, w) in gcoef.iter_mut().zip(coef) {
            *g += 2.0 * lam * w;
        }
        let gbias: Vec<f64> = (0..c).map(|j| (0..n).map(|r| ds[r * c + j]).sum()).collect();
        // ‖∇W‖² in feature space
        let gn = match &gram {
            Some(g) => {
                let mut gg = vec![0.0; c * n];
                matmul(c, n, n, &gcoef, false, &g.data, false, 0.0, &mut gg);
                gg.iter().zip(&gcoef).map(|(a, b)| a * b).sum::<f64>()
            }
            None => gcoef.iter().map(|v| v * v).sum::<f64>(),
        };
        let gnorm = (gn.max(0.0) + gbias.iter().map(|v| v * v).sum::<f64>()).sqrt();
        (value, gcoef, gbias, gnorm)
    };

    let mut lr = cfg.learning_rate;
    let (mut value, mut gcoef, mut gbias, mut gnorm) = obj(&coef, &bias);
    let mut history = vec![value];
    let mut iters = 0;
    while iters < cfg.max_iters && gnorm > cfg.grad_tol {
        let mut accepted = false;
        for _ in 0..60 {
            let nc: Vec<f64> = coef.iter().zip(&gcoef).map(|(w, g)| w - lr * g).collect();
            let nb: Vec<f64> = bias.iter().zip(&gbias).map(|(b, g)| b - lr * g).collect();
            let next = obj(&nc, &nb);
            if next.0 <= value {
                coef = nc;
                bias = nb;
                (value, gcoef, gbias, gnorm) = next;
                accepted = true;
                break;
            }
            lr /= 2.0;
        }
        if !accepted {
            break;
        }
        history.push(value);
        iters += 1;
    }

    let weights = if gram.is_some() {
        let mut w = Matrix::zeros(c, d);
        matmul(c, n, d, &coef, false, &x.data, false, 0.0, &mut w.data);
        w
    } else {
        Matrix::from_vec(c, d, coef)
    };
    LinearModel { weights, bias, loss_history: history, final_learning_rate: lr, iterations: iters }
}

/// Fit on the support features, predict the query features.
pub fn fit_predict(support: &FeatureMatrix, query: &FeatureMatrix, cfg: &ClassifierConfig) -> Result<Predictions> {
    let clf = train_classifier(support, cfg)?;
    classify(&clf, query)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> FeatureMatrix {
        let d = rows[0].len();
        let n = rows.len();
        FeatureMatrix {
            rows: Matrix::from_vec(n, d, rows.concat()),
            labels,
            tap: Some(FeatureTap::Cnn2),
            modality: Modality::Both,
            duplication: 1,
        }
    }

    #[test]
    fn separable_toy() {
        let f = fm(vec![vec![-1.0], vec![1.0]], vec![0, 1]);
        let cfg = ClassifierConfig { l2_strength: 0.01, ..Default::default() };
        let clf = train_classifier(&f, &cfg).unwrap();
        let p = classify(&clf, &f).unwrap();
        assert_eq!(p.labels, vec![0, 1]);
        let q = fm(vec![vec![-0.01], vec![0.01], vec![1.0]], vec![0, 1, 1]);
        let p = classify(&clf, &q).unwrap();
        assert_eq!(p.labels, vec![0, 1, 1]);
        assert!(p.probabilities.unwrap().get(2, 1) > 0.9);
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let f = fm(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![0.0, 1.0]], vec![0, 1, 2]);
        let cfg = ClassifierConfig { max_iters: 0, ..Default::default() };
        let clf = train_classifier(&f, &cfg).unwrap();
        let p = classify(&clf, &f).unwrap().probabilities.unwrap();
        assert!(p.data.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn dual_route_matches_primal() {
        // 4 rows in 7 dims (dual) vs the same problem padded to force primal
        let rows: Vec<Vec<f64>> = (0..4).map(|i| (0..7).map(|j| ((i * 7 + j) as f64 * 0.37).sin()).collect()).collect();
        let labels = vec![0, 1, 2, 1];
        let cfg = ClassifierConfig { max_iters: 50, ..Default::default() };
        let dual = train_classifier(&fm(rows.clone(), labels.clone()), &cfg).unwrap();
        // reference: plain primal descent at the same step size
        let x = Matrix::from_vec(4, 7, rows.concat());
        let primal = {
            let d = 7;
            let c = 3;
            let n = 4;
            let mut w = vec![0.0; c * d];
            let mut b = vec![0.0; c];
            let lam = 1.0 / n as f64;
            let lr = match &dual.model {
                ClassifierModel::Lr(m) => m.final_learning_rate,
                _ => unreachable!(),
            };
            for _ in 0..50 {
                let mut gw = vec![0.0; c * d];
                let mut gb = vec![0.0; c];
                for r in 0..n {
                    let s: Vec<f64> = (0..c).map(|j| b[j] + (0..d).map(|k| w[j * d + k] * x.get(r, k)).sum::<f64>()).collect();
                    let p = softmax_row(&s, 1.0);
                    for j in 0..c {
                        let e = (p[j] - if j == labels[r] { 1.0 } else { 0.0 }) / n as f64;
                        gb[j] += e;
                        for k in 0..d {
                            gw[j * d + k] += e * x.get(r, k);
                        }
                    }
                }
                for i in 0..c * d {
                    w[i] -= lr * (gw[i] + 2.0 * lam * w[i]);
                }
                for j in 0..c {
                    b[j] -= lr * gb[j];
                }
            }
            w
        };
        if let ClassifierModel::Lr(m) = &dual.model {
            for (a, b) in m.weights.data.iter().zip(&primal) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn nearest_neighbor_self_classifies() {
        let f = fm(vec![vec![0.0, 0.0], vec![5.0, 5.0], vec![0.0, 5.0]], vec![2, 0, 1]);
        let cfg = ClassifierConfig { kind: ClassifierKind::NearestNeighbor, ..Default::default() };
        let clf = train_classifier(&f, &cfg).unwrap();
        assert_eq!(classify(&clf, &f).unwrap().labels, vec![2, 0, 1]);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let f = fm(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![0, 1]);
        let clf = train_classifier(&f, &ClassifierConfig::default()).unwrap();
        let q = fm(vec![vec![0.0]], vec![0]);
        assert!(matches!(classify(&clf, &q), Err(Error::Shape(_))));
    }

    #[test]
    fn single_class_is_training_error() {
        let f = fm(vec![vec![0.0], vec![1.0]], vec![1, 1]);
        assert!(matches!(train_classifier(&f, &ClassifierConfig::default()), Err(Error::Training(_))));
    }
}
