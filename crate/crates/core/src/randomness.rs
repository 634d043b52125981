//! Shared randomness between encoder and decoder.
//!
//! A [`CommonRandomness`] is a master seed plus a path of labels. Deriving a
//! child appends a label; the 64-bit seed of a node is a SHA-256 digest of the
//! master seed and the full path, so identical `(seed, path)` pairs always
//! yield identical generators regardless of the order in which siblings are
//! derived.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CommonRandomness {
    master: u64,
    path: Vec<String>,
}

impl CommonRandomness {
    pub fn new(master: u64) -> Self {
        CommonRandomness {
            master,
            path: Vec::new(),
        }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn path(&self) -> &[String] {
        &self.path
    }

    pub fn derive(&self, label: impl std::fmt::Display) -> Self {
        let mut path = self.path.clone();
        path.push(label.to_string());
        CommonRandomness {
            master: self.master,
            path,
        }
    }

    pub fn seed(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.master.to_le_bytes());
        for label in &self.path {
            h.update((label.len() as u64).to_le_bytes());
            h.update(label.as_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed())
    }
}

/// Seed for the `index`-th child of `parent` without allocating a path.
///
/// Used in hot loops (per-trial and per-word seeding); it mixes with
/// SplitMix64 rather than SHA-256 and is not equal to
/// `CommonRandomness::derive(index).seed()`.
#[inline]
pub fn child_seed(parent: u64, index: u64) -> u64 {
    let mut z = parent
        ^ index
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
