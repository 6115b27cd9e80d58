//! Labelled random streams.
//!
//! Every random decision in training and scoring draws from a stream keyed by
//! `(seed, label)`. Two streams with the same key replay the same sequence, and
//! streams with different labels are independent, so results do not depend on
//! the order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    label: String,
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        Self {
            seed,
            label: label.into(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Child stream labelled `<self>/<part>`.
    pub fn derive(&self, part: impl AsRef<str>) -> Self {
        let label = if self.label.is_empty() {
            part.as_ref().to_string()
        } else {
            format!("{}/{}", self.label, part.as_ref())
        };
        Self {
            seed: self.seed,
            label,
        }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(self.label.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha20Rng::from_seed(key)
    }
}
