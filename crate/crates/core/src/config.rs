//! The JSON run configuration shared by every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::convnet::{FeatureTap, TrainConfig};
use crate::distill::{DistillConfig, Selection};
use crate::error::{Error, Result};
use crate::fewshot::ClassifierConfig;
use crate::preprocess::{Modality, SegmentationConfig};
use crate::report::{BaselineKind, Protocol, ReportFormat};
use crate::seed::SeedHasher;
use crate::synth::DatasetGenConfig;

/// Which scenarios play the source and target roles. Empty `source` means
/// every scenario not listed as a target; empty `target` means every
/// scenario not used for training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Domains {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetatestConfig {
    pub shots: Vec<usize>,
    pub queries_per_class: usize,
    pub repeats: usize,
    pub tap: FeatureTap,
    pub modality: Modality,
    pub classifier: ClassifierConfig,
    /// Baselines run by the full pipeline next to the few-shot method.
    pub baselines: Vec<BaselineKind>,
    /// Generation used by the full pipeline.
    pub selection: Selection,
    pub seed: u64,
}

impl Default for MetatestConfig {
    fn default() -> Self {
        let p = Protocol::default();
        MetatestConfig {
            shots: vec![1, 5],
            queries_per_class: p.queries_per_class,
            repeats: p.repeats,
            tap: p.tap,
            modality: p.modality,
            classifier: p.classifier,
            baselines: vec![BaselineKind::DirectTransferAmp, BaselineKind::DirectTransferPhd, BaselineKind::RawLr],
            selection: Selection::SourceVal,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub formats: Vec<ReportFormat>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { formats: vec![ReportFormat::Csv, ReportFormat::Json] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; every section seed is hashed together with it.
    pub seed: u64,
    pub domains: Domains,
    pub synth: DatasetGenConfig,
    pub preprocess: SegmentationConfig,
    pub train: TrainConfig,
    pub distill: DistillConfig,
    pub metatest: MetatestConfig,
    pub report: ReportConfig,
}

impl RunConfig {
    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::Config(format!("file not found: {}", path.display())));
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&PathBuf>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), |p| RunConfig::load(p))
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.preprocess.validate()?;
        self.train.validate()?;
        self.distill.validate()?;
        if self.metatest.shots.is_empty() {
            return Err(Error::Config("metatest.shots must list at least one value".into()));
        }
        for &k in &self.metatest.shots {
            self.protocol(k).validate()?;
        }
        if self.report.formats.is_empty() {
            return Err(Error::Config("report.formats must not be empty".into()));
        }
        if let Some(s) = self.domains.source.iter().find(|s| self.domains.target.contains(s)) {
            return Err(Error::Config(format!("scenario '{s}' is listed as both source and target")));
        }
        Ok(())
    }

    fn mix(&self, section: &str, seed: u64) -> u64 {
        SeedHasher::new(self.seed).str(section).u64(seed).finish()
    }

    pub fn synth_seed(&self) -> u64 {
        self.mix("synth", 0)
    }

    /// `train` section with its seed combined with the global seed.
    pub fn effective_train(&self) -> TrainConfig {
        TrainConfig { seed: self.mix("train", self.train.seed), ..self.train.clone() }
    }

    pub fn effective_distill(&self) -> DistillConfig {
        DistillConfig { seed: self.mix("distill", self.distill.seed), ..self.distill.clone() }
    }

    /// Protocol for `shots` with the effective seed. The seed does not
    /// depend on `shots`, so 1-shot and 5-shot runs use paired episodes.
    pub fn protocol(&self, shots: usize) -> Protocol {
        let m = &self.metatest;
        Protocol {
            shots,
            queries_per_class: m.queries_per_class,
            repeats: m.repeats,
            tap: m.tap,
            modality: m.modality,
            classifier: m.classifier.clone(),
            seed: self.mix("metatest", m.seed),
        }
    }
}
