//! Deterministic embedding vectors derived from a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const MARKER_SALT: u64 = 0x4c4c_4c4c_0000_0001;
const PROMPT_SALT: u64 = 0x5050_5050_0000_0002;
const SLOT_SALT: u64 = 0x5353_5353_0000_0003;

/// Seeded lookup table: the same `(seed, key)` always yields the same
/// vector, without materializing the whole table.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingTable {
    seed: u64,
    dim: usize,
    scale: f64,
}

impl EmbeddingTable {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self {
            seed,
            dim,
            scale: 1.0,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn vector(&self, salt: u64, key: u64) -> Vec<f64> {
        let mixed = self.seed ^ salt.rotate_left(17) ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(mixed);
        (0..self.dim)
            .map(|_| self.scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn vocab(&self, vocab_id: u32) -> Vec<f64> {
        self.vector(0, u64::from(vocab_id))
    }

    /// The single `<L>` vector.
    pub fn marker(&self) -> Vec<f64> {
        self.vector(MARKER_SALT, 0)
    }

    pub fn prompt(&self, index: usize) -> Vec<f64> {
        self.vector(PROMPT_SALT, index as u64)
    }

    /// Offset added to the `slot`-th token of a multi-token frame.
    pub fn frame_slot(&self, slot: usize) -> Vec<f64> {
        self.vector(SLOT_SALT, slot as u64)
    }
}
