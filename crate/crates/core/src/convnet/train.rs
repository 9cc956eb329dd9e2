use std::collections::BTreeMap;

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::arch::ArchSpec;
use super::loss::cross_entropy;
use super::model::{CnnSubmodel, ForwardCache, Mode, Output};
use super::optim::{Adam, AdamConfig, Optimizer};
use crate::error::{Error, Result};
use crate::linalg::{argmax, Matrix};
use crate::preprocess::{Modality, Sample, SampleShape};
use crate::seed;

/// Samples per inference forward call.
const EVAL_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 8, epochs: 30, learning_rate: 1e-3, adam: AdamConfig::default(), val_fraction: 0.1, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("train.val_fraction must be in (0, 1), got {}", self.val_fraction)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// The amplitude and phase-difference submodels.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub amp: CnnSubmodel,
    pub phd: CnnSubmodel,
    pub generation: usize,
}

impl FeatureExtractor {
    /// Fresh submodels sized for `shape`, initialized from `seed`.
    pub fn new(shape: SampleShape, num_classes: usize, seed: u64) -> Result<Self> {
        let hw = (shape.tw, shape.nsc);
        let amp = CnnSubmodel::new(ArchSpec::standard_for_input(shape.nrt, num_classes, hw), seed::derive(seed, "amp"))?;
        let phd = CnnSubmodel::new(ArchSpec::standard_for_input(shape.npd, num_classes, hw), seed::derive(seed, "phd"))?;
        Ok(FeatureExtractor { amp, phd, generation: 0 })
    }

    pub fn num_classes(&self) -> usize {
        self.amp.arch().num_classes
    }

    pub fn submodel(&self, which: Modality) -> &CnnSubmodel {
        match which {
            Modality::Amp => &self.amp,
            Modality::Phd => &self.phd,
            Modality::Both => panic!("FeatureExtractor::submodel takes a single modality"),
        }
    }

    pub fn submodel_mut(&mut self, which: Modality) -> &mut CnnSubmodel {
        match which {
            Modality::Amp => &mut self.amp,
            Modality::Phd => &mut self.phd,
            Modality::Both => panic!("FeatureExtractor::submodel_mut takes a single modality"),
        }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.amp.set_mode(mode);
        self.phd.set_mode(mode);
    }

    /// Validates that `shape` matches what the submodels expect.
    pub fn check_shape(&self, shape: SampleShape) -> Result<()> {
        let want = |m: &CnnSubmodel| (m.arch().c_in, m.arch().input_hw);
        if want(&self.amp) != (shape.nrt, (shape.tw, shape.nsc)) || want(&self.phd) != (shape.npd, (shape.tw, shape.nsc)) {
            return Err(Error::Shape(format!(
                "samples of {}+{} layers x {}x{} do not fit an extractor built for {}+{} layers x {}x{}",
                shape.nrt,
                shape.npd,
                shape.tw,
                shape.nsc,
                self.amp.arch().c_in,
                self.phd.arch().c_in,
                self.amp.arch().input_hw.0,
                self.amp.arch().input_hw.1
            )));
        }
        Ok(())
    }
}

/// One line of a training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean objective over the epoch's minibatches (sample weighted).
    pub train_loss: f64,
    /// Training-mode accuracy accumulated over the epoch.
    pub train_acc: f64,
    /// Inference-mode cross-entropy on the validation split.
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub amp_curve: Vec<EpochStats>,
    pub phd_curve: Vec<EpochStats>,
    pub split: Split,
    pub val_acc_amp: f64,
    pub val_acc_phd: f64,
}

/// Train/validation partition as indices into a sample list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Split {
    /// The stratified split used by extractor training; distillation
    /// recomputes it from the same `(val_fraction, seed)`.
    pub fn stratified(samples: &[&Sample], val_fraction: f64, seed: u64) -> Self {
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        let (train, val) = stratified_split(&labels, val_fraction, seed::derive(seed, "split"));
        Split { train, val }
    }
}

/// Per-class shuffled split. Each class with at least two samples puts
/// `round(n·val_fraction)` of them (at least one, at most `n − 1`) into
/// validation. Both lists come back sorted.
pub fn stratified_split(labels: &[usize], val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (y, mut idx) in by_class {
        idx.shuffle(&mut seed::rng(seed::derive_indexed(seed, "split", y as u64)));
        let n = idx.len();
        let n_val = if n < 2 { 0 } else { ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1) };
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

pub(crate) fn gather(samples: &[&Sample], which: Modality, idx: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(idx.len() * samples.first().map_or(0, |s| s.input(which).len()));
    for &i in idx {
        out.extend_from_slice(samples[i].input(which));
    }
    out
}

/// Inference-mode logits (or a tap) for `idx`, chunked.
pub(crate) fn infer(model: &CnnSubmodel, samples: &[&Sample], which: Modality, idx: &[usize], output: Output) -> Result<Matrix<f32>> {
    let mut rows = 0;
    let mut cols = 0;
    let mut data = Vec::new();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let m = model.forward(&gather(samples, which, chunk), chunk.len(), output)?;
        rows += m.rows;
        cols = m.cols;
        data.extend(m.data);
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

/// Fraction of rows whose argmax equals the label.
pub(crate) fn accuracy(logits: &Matrix<f32>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits.rows_iter().zip(labels).filter(|(r, &y)| argmax(r) == y).count();
    hits as f64 / labels.len() as f64
}

/// Minibatch loop shared by extractor training and distillation.
///
/// `loss` maps (logits, sample indices of the batch) to the mean batch
/// objective and its gradient at the logits. With a validation set the
/// weights of the best validation epoch (earliest on ties) are restored.
/// The model is left in inference mode.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit(
    model: &mut CnnSubmodel,
    samples: &[&Sample],
    which: Modality,
    train_idx: &[usize],
    val_idx: &[usize],
    epochs: usize,
    batch_size: usize,
    shuffle_seed: u64,
    opt: &mut dyn Optimizer,
    loss: &dyn Fn(&Matrix<f32>, &[usize]) -> Result<(f64, Matrix<f32>)>,
) -> Result<Vec<EpochStats>> {
    let mut cache = ForwardCache::new();
    let mut curve = Vec::with_capacity(epochs);
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| samples[i].label).collect();
    let mut best: Option<(f64, usize, CnnSubmodel)> = None;
    for epoch in 0..epochs {
        model.set_mode(Mode::Training);
        let mut order = train_idx.to_vec();
        order.shuffle(&mut seed::rng(seed::derive_indexed(shuffle_seed, "epoch", epoch as u64)));
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for batch in order.chunks(batch_size) {
            let input = gather(samples, which, batch);
            let logits = model.forward_train(&input, batch.len(), &mut cache)?;
            let (l, dlogits) = loss(&logits, batch)?;
            if !l.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += l * batch.len() as f64;
            hits += logits.rows_iter().zip(batch).filter(|(r, &i)| argmax(r) == samples[i].label).count();
            let grad = model.backward(&mut cache, &dlogits);
            opt.step(model.params_mut(), &grad);
        }
        model.set_mode(Mode::Inference);
        let (val_loss, val_acc) = if val_idx.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let logits = infer(model, samples, which, val_idx, Output::Logits)?;
            (cross_entropy(&logits, &val_labels)?.0, accuracy(&logits, &val_labels))
        };
        let n = train_idx.len().max(1) as f64;
        let stats = EpochStats { epoch, train_loss: loss_sum / n, train_acc: hits as f64 / n, val_loss, val_acc };
        info!(
            "{which} epoch {epoch}: loss {:.4} acc {:.3} val_loss {:.4} val_acc {:.3}",
            stats.train_loss, stats.train_acc, stats.val_loss, stats.val_acc
        );
        if !val_idx.is_empty() && best.as_ref().is_none_or(|b| val_acc > b.0) {
            best = Some((val_acc, epoch, model.clone()));
        }
        curve.push(stats);
    }
    if let Some((acc, epoch, m)) = best {
        if epoch + 1 != epochs {
            info!("{which}: restoring epoch {epoch} (val_acc {acc:.3})");
            *model = m;
        }
    }
    model.set_mode(Mode::Inference);
    Ok(curve)
}

pub(crate) fn check_training_set(samples: &[&Sample], num_classes: usize) -> Result<SampleShape> {
    let first = samples.first().ok_or_else(|| Error::Training("empty training set".into()))?;
    let shape = first.shape;
    if let Some(s) = samples.iter().find(|s| s.shape != shape) {
        return Err(Error::Shape(format!("sample {:?} has shape {:?}, expected {:?}", s.source, s.shape, shape)));
    }
    if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
        return Err(Error::Validation(format!("label {} out of range for {num_classes} classes", s.label)));
    }
    let mut seen: Vec<usize> = samples.iter().map(|s| s.label).collect();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 {
        return Err(Error::Training(format!("training set covers {} class(es); need at least 2", seen.len())));
    }
    Ok(shape)
}

/// Trains generation 0: both submodels independently with minibatch
/// cross-entropy and Adam, on a stratified train/validation split.
pub fn train_extractor(samples: &[&Sample], num_classes: usize, cfg: &TrainConfig) -> Result<(FeatureExtractor, TrainReport)> {
    cfg.validate()?;
    let shape = check_training_set(samples, num_classes)?;
    let mut ex = FeatureExtractor::new(shape, num_classes, seed::derive(cfg.seed, "init"))?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let split = Split::stratified(samples, cfg.val_fraction, cfg.seed);
    let ce = |logits: &Matrix<f32>, batch: &[usize]| {
        let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        cross_entropy(logits, &y)
    };
    let mut curves = Vec::new();
    for which in [Modality::Amp, Modality::Phd] {
        let model = ex.submodel_mut(which);
        let mut opt = Adam::new(model.param_count(), cfg.learning_rate, cfg.adam);
        let shuffle = seed::derive(cfg.seed, &format!("shuffle-{which}"));
        let curve = fit(model, samples, which, &split.train, &split.val, cfg.epochs, cfg.batch_size, shuffle, &mut opt, &ce)
            .map_err(|e| e.context(format!("training {which} submodel")))?;
        curves.push(curve);
    }
    ex.set_mode(Mode::Inference);
    let val: Vec<&Sample> = split.val.iter().map(|&i| samples[i]).collect();
    let (val_acc_amp, val_acc_phd) =
        if val.is_empty() { (f64::NAN, f64::NAN) } else { (evaluate(&ex, &val, Modality::Amp)?, evaluate(&ex, &val, Modality::Phd)?) };
    let phd_curve = curves.pop().expect("two curves");
    let amp_curve = curves.pop().expect("two curves");
    Ok((ex, TrainReport { amp_curve, phd_curve, split, val_acc_amp, val_acc_phd }))
}

/// Inference-mode accuracy of one submodel.
pub fn evaluate(ex: &FeatureExtractor, samples: &[&Sample], which: Modality) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Validation("cannot evaluate on an empty set".into()));
    }
    let model = inference_view(ex.submodel(which));
    let idx: Vec<usize> = (0..samples.len()).collect();
    let logits = infer(&model, samples, which, &idx, Output::Logits)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(accuracy(&logits, &labels))
}

/// Borrowed or cloned model guaranteed to be in inference mode.
pub(crate) fn inference_view(m: &CnnSubmodel) -> std::borrow::Cow<'_, CnnSubmodel> {
    if m.mode() == Mode::Inference {
        std::borrow::Cow::Borrowed(m)
    } else {
        let mut c = m.clone();
        c.set_mode(Mode::Inference);
        std::borrow::Cow::Owned(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_stratified_and_deterministic() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let (tr, va) = stratified_split(&labels, 0.1, 3);
        assert_eq!(tr.len() + va.len(), 100);
        for c in 0..4 {
            let n = va.iter().filter(|&&i| labels[i] == c).count();
            assert!((2..=3).contains(&n), "class {c}: {n}");
        }
        assert_eq!((tr.clone(), va.clone()), stratified_split(&labels, 0.1, 3));
        assert_ne!(va, stratified_split(&labels, 0.1, 4).1);
    }

    #[test]
    fn tiny_classes_keep_a_training_sample() {
        let (tr, va) = stratified_split(&[0, 0, 1], 0.5, 1);
        assert_eq!(va.len(), 1);
        assert_eq!(tr.len(), 2);
    }
}
