//! Seed derivation.
//!
//! One integer seed fans out to every stochastic component by hashing it
//! together with a label describing the component. SHA-256 keeps the
//! mapping stable across platforms and toolchain versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Incremental builder for a derived seed.
#[derive(Clone)]
pub struct SeedHasher(Sha256);

impl SeedHasher {
    pub fn new(base: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"dasecount-seed");
        h.update(base.to_le_bytes());
        SeedHasher(h)
    }

    pub fn str(mut self, s: &str) -> Self {
        self.0.update((s.len() as u64).to_le_bytes());
        self.0.update(s.as_bytes());
        self
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.0.update([0xA5]);
        self.0.update(v.to_le_bytes());
        self
    }

    pub fn finish(self) -> u64 {
        let d = self.0.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("sha256 digest is 32 bytes"))
    }
}

/// Derives a child seed from `base` and a textual label.
pub fn derive(base: u64, label: &str) -> u64 {
    SeedHasher::new(base).str(label).finish()
}

/// Derives a child seed from `base`, a label and an index.
pub fn derive_indexed(base: u64, label: &str, index: u64) -> u64 {
    SeedHasher::new(base).str(label).u64(index).finish()
}

/// The RNG used throughout the crate. ChaCha8 output is specified and
/// portable, unlike `StdRng`.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
