//! Born-again distillation: each generation is a freshly initialized
//! copy of the architecture trained against hard labels and the previous
//! generation's soft outputs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::convnet::loss::distill_loss;
use crate::convnet::{
    self, check_training_set, evaluate, fit, infer, inference_view, save_checkpoint, CnnSubmodel, EpochStats, FeatureExtractor, Mode,
    Output, Sgd, Split,
};
use crate::error::{Error, Result};
use crate::linalg::{softmax_row, Matrix};
use crate::preprocess::{Modality, Sample};
use crate::seed;

pub const LINEAGE_FILE: &str = "lineage.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Weight of the hard-label cross-entropy term.
    pub alpha: f64,
    /// Number of distilled generations `K`.
    pub generations: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha: 0.5,
            generations: 6,
            batch_size: 100,
            epochs: 100,
            learning_rate: 1e-3,
            weight_decay: 5e-4,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("distill.alpha must be in [0, 1], got {}", self.alpha)));
        }
        if self.generations < 1 {
            return Err(Error::Config("distill.generations must be >= 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("distill.temperature must be > 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("distill.batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("distill.learning_rate must be > 0 and weight_decay >= 0".into()));
        }
        Ok(())
    }
}

/// Teacher probabilities at `temperature`, one row per listed sample.
pub fn soft_labels(teacher: &CnnSubmodel, samples: &[&Sample], which: Modality, idx: &[usize], temperature: f64) -> Result<Vec<Vec<f64>>> {
    let t = inference_view(teacher);
    let logits = infer(&t, samples, which, idx, Output::Logits)?;
    Ok(logits.rows_iter().map(|r| softmax_row(r, temperature)).collect())
}

/// Trains one student submodel against `teacher`. Soft labels are computed
/// once up front; the student starts from a fresh initialization drawn
/// from `seed`.
pub fn distill_step(
    teacher: &CnnSubmodel,
    samples: &[&Sample],
    which: Modality,
    split: &Split,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<(CnnSubmodel, Vec<EpochStats>)> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Training("empty distillation training set".into()));
    }
    let soft = soft_labels(teacher, samples, which, &split.train, cfg.temperature)?;
    // row of each training sample in `soft`
    let mut slot = vec![usize::MAX; samples.len()];
    for (row, &i) in split.train.iter().enumerate() {
        slot[i] = row;
    }
    let mut student = CnnSubmodel::new(teacher.arch().clone(), seed::derive(seed, "student-init"))?;
    let mut opt = Sgd { lr: cfg.learning_rate, weight_decay: cfg.weight_decay };
    let loss = |logits: &Matrix<f32>, batch: &[usize]| {
        let labels: Vec<usize> = batch.iter().map(|&i| samples[i].label).collect();
        let teacher_rows: Vec<Vec<f64>> = batch.iter().map(|&i| soft[slot[i]].clone()).collect();
        let (parts, grad) = distill_loss(logits, &labels, Some(&teacher_rows), cfg.alpha, cfg.temperature)?;
        Ok((parts.total, grad))
    };
    let shuffle = seed::derive(seed, "student-shuffle");
    let curve = fit(&mut student, samples, which, &split.train, &split.val, cfg.epochs, cfg.batch_size, shuffle, &mut opt, &loss)?;
    student.set_mode(Mode::Inference);
    Ok((student, curve))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub val_acc_amp: f64,
    pub val_acc_phd: f64,
    /// Mean of the two submodel accuracies.
    pub val_acc_combined: f64,
}

#[derive(Clone, Debug)]
pub struct DistillLineage {
    pub models: Vec<FeatureExtractor>,
    pub stats: Vec<GenerationStats>,
    pub chosen: usize,
    pub config: DistillConfig,
}

/// How to pick the generation used for meta-testing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Highest combined source-validation accuracy; earliest on ties.
    SourceVal,
    Explicit(usize),
}

fn generation_stats(ex: &FeatureExtractor, samples: &[&Sample], split: &Split) -> Result<GenerationStats> {
    let val: Vec<&Sample> = split.val.iter().map(|&i| samples[i]).collect();
    if val.is_empty() {
        return Err(Error::Validation("distillation needs a nonempty validation split".into()));
    }
    let a = evaluate(ex, &val, Modality::Amp)?;
    let p = evaluate(ex, &val, Modality::Phd)?;
    Ok(GenerationStats { generation: ex.generation, val_acc_amp: a, val_acc_phd: p, val_acc_combined: (a + p) / 2.0 })
}

/// Generations `1..=K`, each distilled from its predecessor, with source
/// validation accuracies after each one. `split` should be the split used
/// to train `gen0`.
pub fn distill_lineage(gen0: &FeatureExtractor, samples: &[&Sample], split: &Split, cfg: &DistillConfig) -> Result<DistillLineage> {
    cfg.validate()?;
    check_training_set(samples, gen0.num_classes())?;
    for s in samples {
        gen0.check_shape(s.shape)?;
    }
    let mut g0 = gen0.clone();
    g0.generation = 0;
    g0.set_mode(Mode::Inference);
    let mut stats = vec![generation_stats(&g0, samples, split)?];
    let mut models = vec![g0];
    for k in 1..=cfg.generations {
        let teacher = &models[k - 1];
        let mut next = Vec::new();
        for which in [Modality::Amp, Modality::Phd] {
            let s = seed::SeedHasher::new(cfg.seed).str("generation").u64(k as u64).str(which.as_str()).finish();
            let (student, _) = distill_step(teacher.submodel(which), samples, which, split, cfg, s)
                .map_err(|e| e.context(format!("generation {k} ({which})")))?;
            next.push(student);
        }
        let phd = next.pop().expect("two submodels");
        let amp = next.pop().expect("two submodels");
        let ex = FeatureExtractor { amp, phd, generation: k };
        let st = generation_stats(&ex, samples, split).map_err(|e| e.context(format!("generation {k}")))?;
        log::info!("generation {k}: val acc amp {:.3} phd {:.3} combined {:.3}", st.val_acc_amp, st.val_acc_phd, st.val_acc_combined);
        stats.push(st);
        models.push(ex);
    }
    let mut lineage = DistillLineage { models, stats, chosen: 0, config: cfg.clone() };
    lineage.chosen = select_index(&lineage.stats, Selection::SourceVal)?;
    Ok(lineage)
}

/// Index of the generation picked by `criterion`.
pub fn select_index(stats: &[GenerationStats], criterion: Selection) -> Result<usize> {
    if stats.is_empty() {
        return Err(Error::Validation("empty lineage".into()));
    }
    match criterion {
        Selection::SourceVal => {
            let mut best = 0;
            for (i, s) in stats.iter().enumerate() {
                if s.val_acc_combined > stats[best].val_acc_combined {
                    best = i;
                }
            }
            Ok(best)
        }
        Selection::Explicit(g) if g < stats.len() => Ok(g),
        Selection::Explicit(g) => {
            Err(Error::Range(format!("generation {g} requested but the lineage ends at generation {}", stats.len() - 1)))
        }
    }
}

impl DistillLineage {
    pub fn select(&self, criterion: Selection) -> Result<&FeatureExtractor> {
        Ok(&self.models[select_index(&self.stats, criterion)?])
    }

    /// Writes `gen{k}.ckpt` for every generation plus `lineage.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg = serde_json::to_value(&self.config)?;
        for m in &self.models {
            save_checkpoint(m, &cfg, &dir.join(format!("gen{}.ckpt", m.generation)))?;
        }
        let doc = LineageFile { generations: self.stats.clone(), chosen: self.chosen, config: self.config.clone() };
        let path = dir.join(LINEAGE_FILE);
        fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(LINEAGE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let doc: LineageFile = serde_json::from_str(&text)?;
        let models = doc
            .generations
            .iter()
            .map(|g| convnet::load_checkpoint(&dir.join(format!("gen{}.ckpt", g.generation))).map(|(m, _)| m))
            .collect::<Result<Vec<_>>>()?;
        Ok(DistillLineage { models, stats: doc.generations, chosen: doc.chosen, config: doc.config })
    }
}

/// `lineage.json`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineageFile {
    generations: Vec<GenerationStats>,
    chosen: usize,
    config: DistillConfig,
}

/// Picks a generation by the given criterion.
pub fn select_generation(lineage: &DistillLineage, criterion: Selection) -> Result<&FeatureExtractor> {
    lineage.select(criterion)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(accs: &[f64]) -> Vec<GenerationStats> {
        accs.iter()
            .enumerate()
            .map(|(g, &a)| GenerationStats { generation: g, val_acc_amp: a, val_acc_phd: a, val_acc_combined: a })
            .collect()
    }

    #[test]
    fn selection_prefers_earliest_best() {
        let s = stats(&[0.90, 0.92, 0.95, 0.95, 0.93, 0.91, 0.90]);
        assert_eq!(select_index(&s, Selection::SourceVal).unwrap(), 2);
        assert_eq!(select_index(&s, Selection::Explicit(4)).unwrap(), 4);
        assert!(matches!(select_index(&s, Selection::Explicit(9)), Err(Error::Range(_))));
    }

    #[test]
    fn config_validation() {
        assert!(DistillConfig { alpha: 1.2, ..Default::default() }.validate().is_err());
        assert!(DistillConfig { generations: 0, ..Default::default() }.validate().is_err());
        assert!(DistillConfig { temperature: 0.0, ..Default::default() }.validate().is_err());
        DistillConfig::default().validate().unwrap();
    }
}
