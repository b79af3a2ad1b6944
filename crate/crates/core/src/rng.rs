//! Keyed, splittable random streams.
//!
//! Every random draw in a run is addressed by `(master seed, label, index)`.
//! The label is hashed together with the master seed into a ChaCha8 key and
//! the index selects the ChaCha stream, so any frame or bin can be generated
//! independently of the others and of the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_xoshiro::Xoshiro256PlusPlus;
use sha2::{Digest, Sha256};

/// A 256-bit key for one labelled family of random streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey([u8; 32]);

impl StreamKey {
    pub fn derive(seed: u64, label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"ghostzero/v1");
        hasher.update(seed.to_le_bytes());
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        StreamKey(hasher.finalize().into())
    }

    /// Child key, e.g. `key.child("reference")`.
    pub fn child(&self, label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(self.0);
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        StreamKey(hasher.finalize().into())
    }

    /// Independent generator for stream `index`.
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.0);
        rng.set_stream(index);
        rng
    }

    /// Fast generator for stream `index`, seeded from the ChaCha stream.
    /// Used in hot loops that draw thousands of variates per index.
    pub fn fast_stream(&self, index: u64) -> Xoshiro256PlusPlus {
        Xoshiro256PlusPlus::from_rng(&mut self.stream(index))
    }

    /// Collapse the key to a u64, for seeding sub-configs.
    pub fn to_seed(&self) -> u64 {
        u64::from_le_bytes(self.0[..8].try_into().unwrap())
    }
}
