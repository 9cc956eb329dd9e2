//! Extractor checkpoints.
//!
//! Layout: magic `DASECKPT`, u32 version, u64 header length (all LE), a
//! JSON header, then for the amplitude and then the phase-difference
//! submodel: parameters, running means and running variances as LE `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::ArchSpec;
use super::model::{CnnSubmodel, Mode};
use super::train::FeatureExtractor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DASECKPT";
const VERSION: u32 = 1;

/// Architecture fingerprint stored per submodel and checked on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fingerprint {
    pub c_in: usize,
    pub num_classes: usize,
    pub layer_hash: String,
    pub param_count: usize,
    pub arch: ArchSpec,
}

impl Fingerprint {
    pub fn of(arch: &ArchSpec) -> Self {
        Fingerprint {
            c_in: arch.c_in,
            num_classes: arch.num_classes,
            layer_hash: arch.layer_hash(),
            param_count: arch.param_count(),
            arch: arch.clone(),
        }
    }

    fn verify(&self, what: &str) -> Result<()> {
        if *self != Fingerprint::of(&self.arch) {
            return Err(Error::Corruption(format!("{what} architecture fingerprint does not match its layer spec")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub generation: usize,
    pub amp: Fingerprint,
    pub phd: Fingerprint,
    /// Configuration that produced the weights (train or distill section).
    pub config: serde_json::Value,
}

pub fn save_checkpoint(ex: &FeatureExtractor, config: &serde_json::Value, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        generation: ex.generation,
        amp: Fingerprint::of(ex.amp.arch()),
        phd: Fingerprint::of(ex.phd.arch()),
        config: config.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for m in [&ex.amp, &ex.phd] {
        let (mean, var) = m.running_stats();
        let values = m.params().iter().chain(mean.iter().flatten()).chain(var.iter().flatten());
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint, verifying magic, fingerprints and payload length.
/// The extractor comes back in inference mode.
pub fn load_checkpoint(path: &Path) -> Result<(FeatureExtractor, CheckpointHeader)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 20 || &buf[..8] != MAGIC {
        return Err(Error::Format(format!("{}: not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("{}: unsupported checkpoint version {version}", path.display())));
    }
    let hlen = u64::from_le_bytes(buf[12..20].try_into().expect("8 bytes")) as usize;
    let body = buf.get(20..20usize.saturating_add(hlen)).ok_or_else(|| Error::Corruption("truncated checkpoint header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    header.amp.verify("amp")?;
    header.phd.verify("phd")?;
    if header.amp.num_classes != header.phd.num_classes {
        return Err(Error::Corruption("submodels disagree on num_classes".into()));
    }
    let mut floats = buf[20 + hlen..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")));
    let expected: usize = [&header.amp.arch, &header.phd.arch].iter().map(|a| a.param_count() + 2 * a.num_blocks() * a.channels).sum();
    if buf.len() - 20 - hlen != 4 * expected {
        return Err(Error::Corruption(format!("{}: payload length does not match the fingerprint", path.display())));
    }
    let mut read_model = |arch: &ArchSpec| -> Result<CnnSubmodel> {
        let mut m = CnnSubmodel::new(arch.clone(), 0)?;
        for p in m.params_mut() {
            *p = floats.next().expect("length checked");
        }
        let mut stats = || -> Vec<Vec<f32>> {
            (0..arch.num_blocks()).map(|_| (0..arch.channels).map(|_| floats.next().expect("length checked")).collect()).collect()
        };
        let mean = stats();
        let var = stats();
        m.set_running_stats(mean, var)?;
        m.set_mode(Mode::Inference);
        Ok(m)
    };
    let amp = read_model(&header.amp.arch)?;
    let phd = read_model(&header.phd.arch)?;
    Ok((FeatureExtractor { amp, phd, generation: header.generation }, header))
}
