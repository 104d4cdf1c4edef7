//! Stand-in for the decoder's per-frame step prediction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::stream::Frame;

const PREDICTOR_SALT: u64 = 0x6f72_6163_6c65;

/// Returns the true step id with probability `1 − noise_p`; otherwise a
/// class drawn uniformly from all `num_classes`, which may coincide with
/// the truth.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    noise_p: f64,
    num_classes: u32,
    rng: ChaCha8Rng,
}

impl OraclePredictor {
    pub fn new(noise_p: f64, num_classes: usize, seed: u64) -> Self {
        Self {
            noise_p: noise_p.clamp(0.0, 1.0),
            num_classes: num_classes.max(1) as u32,
            rng: ChaCha8Rng::seed_from_u64(seed ^ PREDICTOR_SALT),
        }
    }

    pub fn predict_id(&mut self, true_id: u32) -> u32 {
        if self.noise_p > 0.0 && self.rng.gen_bool(self.noise_p) {
            self.rng.gen_range(0..self.num_classes)
        } else {
            true_id
        }
    }

    pub fn predict(&mut self, frame: &Frame) -> u32 {
        self.predict_id(frame.step_id)
    }
}
