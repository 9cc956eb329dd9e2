use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Convolution kernel extent (square) used by every block.
pub const KERNEL: usize = 3;
/// Zero padding on each border; keeps the convolution "same"-sized.
pub const PADDING: usize = 1;

/// Layer specification of one CNN submodel.
///
/// Every block is conv(`channels`, 3×3, stride 1, pad 1) → batch norm →
/// ReLU → non-overlapping max-pool with the listed `(height, width)`
/// kernel and floor division. A fully connected layer maps the flattened
/// last block output to `num_classes` logits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub c_in: usize,
    pub num_classes: usize,
    pub channels: usize,
    pub pools: Vec<(usize, usize)>,
    /// `(time, subcarrier)` extent of the input planes.
    pub input_hw: (usize, usize),
}

impl ArchSpec {
    /// Six 64-channel blocks, first pool 4×2 then 2×2, on 200×114 inputs.
    pub fn standard(c_in: usize, num_classes: usize) -> Self {
        Self::standard_for_input(c_in, num_classes, (200, 114))
    }

    pub fn standard_for_input(c_in: usize, num_classes: usize, input_hw: (usize, usize)) -> Self {
        let mut pools = vec![(4, 2)];
        pools.extend(std::iter::repeat_n((2, 2), 5));
        ArchSpec { c_in, num_classes, channels: 64, pools, input_hw }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in < 1 {
            return Err(Error::Config("c_in must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.channels < 1 || self.pools.len() < 2 {
            return Err(Error::Config("need >= 1 channel and >= 2 blocks".into()));
        }
        if self.pools.iter().any(|&(h, w)| h == 0 || w == 0) {
            return Err(Error::Config("pool kernels must be nonzero".into()));
        }
        let (h, w) = *self.spatial_chain().last().expect("at least two blocks");
        if h == 0 || w == 0 {
            return Err(Error::Shape(format!("input {}x{} does not survive the pooling chain", self.input_hw.0, self.input_hw.1)));
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.pools.len()
    }

    /// Input channels of block `b`.
    pub fn block_c_in(&self, b: usize) -> usize {
        if b == 0 {
            self.c_in
        } else {
            self.channels
        }
    }

    /// Spatial extent entering block `b`.
    pub fn block_input_hw(&self, b: usize) -> (usize, usize) {
        if b == 0 {
            self.input_hw
        } else {
            self.spatial_chain()[b - 1]
        }
    }

    /// Spatial extent after each block's pooling (floor division).
    pub fn spatial_chain(&self) -> Vec<(usize, usize)> {
        let (mut h, mut w) = self.input_hw;
        self.pools
            .iter()
            .map(|&(ph, pw)| {
                h /= ph;
                w /= pw;
                (h, w)
            })
            .collect()
    }

    /// Flattened length of the last block's output (the FC input).
    pub fn fc_in(&self) -> usize {
        let (h, w) = *self.spatial_chain().last().expect("blocks");
        self.channels * h * w
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let k2 = KERNEL * KERNEL;
        let c = self.channels;
        let first = self.c_in * c * k2 + c;
        let rest = (self.num_blocks() - 1) * (c * c * k2 + c);
        let bn = self.num_blocks() * 2 * c;
        let fc = self.fc_in() * self.num_classes + self.num_classes;
        first + rest + bn + fc
    }

    /// Flattened feature length at a tap point.
    pub fn tap_len(&self, tap: FeatureTap) -> usize {
        let chain = self.spatial_chain();
        match tap {
            FeatureTap::Fc => self.num_classes,
            FeatureTap::Cnn1 => {
                let (h, w) = chain[chain.len() - 1];
                self.channels * h * w
            }
            FeatureTap::Cnn2 => {
                let (h, w) = chain[chain.len() - 2];
                self.channels * h * w
            }
        }
    }

    /// Hex SHA-256 of a canonical rendering of the layer spec.
    pub fn layer_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!(
            "conv{}x{}p{};c_in={};ch={};classes={};in={}x{};pools=",
            KERNEL, KERNEL, PADDING, self.c_in, self.channels, self.num_classes, self.input_hw.0, self.input_hw.1
        ));
        for (ph, pw) in &self.pools {
            h.update(format!("{ph}x{pw},"));
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Intermediate activation exported as a feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureTap {
    /// Fully connected output (`num_classes` values).
    Fc,
    /// Output of the last block, flattened (64 for the standard model).
    Cnn1,
    /// Output of the penultimate block, flattened (576 for the standard model).
    Cnn2,
}

impl FeatureTap {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureTap::Fc => "fc",
            FeatureTap::Cnn1 => "cnn1",
            FeatureTap::Cnn2 => "cnn2",
        }
    }
}

impl std::str::FromStr for FeatureTap {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fc" => Ok(FeatureTap::Fc),
            "cnn1" => Ok(FeatureTap::Cnn1),
            "cnn2" => Ok(FeatureTap::Cnn2),
            other => Err(Error::Config(format!("unknown feature tap '{other}' (fc|cnn1|cnn2)"))),
        }
    }
}

impl std::fmt::Display for FeatureTap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_chain_and_counts() {
        let a = ArchSpec::standard(6, 9);
        assert_eq!(a.spatial_chain(), vec![(50, 57), (25, 28), (12, 14), (6, 7), (3, 3), (1, 1)]);
        assert_eq!(a.param_count(), 189_513);
        assert_eq!(ArchSpec::standard(4, 9).param_count(), 188_361);
        assert_eq!(a.tap_len(FeatureTap::Cnn2), 576);
        assert_eq!(a.tap_len(FeatureTap::Cnn1), 64);
        assert_eq!(a.tap_len(FeatureTap::Fc), 9);
        a.validate().unwrap();
    }

    #[test]
    fn too_small_input_is_rejected() {
        let a = ArchSpec::standard_for_input(6, 9, (100, 114));
        assert!(matches!(a.validate(), Err(Error::Shape(_))));
    }

    #[test]
    fn hash_depends_on_every_field() {
        let a = ArchSpec::standard(6, 9);
        assert_eq!(a.layer_hash(), ArchSpec::standard(6, 9).layer_hash());
        assert_ne!(a.layer_hash(), ArchSpec::standard(4, 9).layer_hash());
        assert_ne!(a.layer_hash(), ArchSpec::standard(6, 8).layer_hash());
    }
}
