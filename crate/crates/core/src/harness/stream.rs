//! Synthetic step streams: step durations, frame timing and features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::config::SimConfig;
use crate::embedding::EmbeddingTable;
use crate::types::{BBox, StepRecord};
use crate::verbalizer::StepCatalog;

const PROTOTYPE_SALT: u64 = 0x7072_6f74_6f00;
const STREAM_SALT: u64 = 0x7374_7265_616d;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: u64,
    pub t_s: f64,
    pub step_id: u32,
    pub feature: Vec<f64>,
    pub boxes: Option<Vec<BBox>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticStream {
    pub steps: Vec<StepRecord>,
    pub frames: Vec<Frame>,
    pub fps: f64,
    pub seed: u64,
}

impl SyntheticStream {
    pub fn duration_s(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.end_s)
    }
}

/// Unit-scale prototype feature of a step class.
pub fn prototype(seed: u64, d: usize, step_id: u32) -> Vec<f64> {
    EmbeddingTable::new(seed ^ PROTOTYPE_SALT, d).vocab(step_id)
}

/// Same as [`generate_stream_with`] using `cfg.feature_noise` for every class.
pub fn generate_stream(cfg: &SimConfig, duration_s: f64) -> Result<SyntheticStream, HarnessError> {
    generate_stream_with(cfg, duration_s, |_| cfg.feature_noise)
}

/// Step durations are normal(`mean_step_s`, `step_s_jitter`) clamped to
/// within two standard deviations and at least one frame period. Classes
/// are drawn uniformly without immediate repeats. Each frame's feature is
/// its class prototype plus Gaussian noise of standard deviation
/// `noise(class)`.
pub fn generate_stream_with(
    cfg: &SimConfig,
    duration_s: f64,
    noise: impl Fn(u32) -> f64,
) -> Result<SyntheticStream, HarnessError> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(HarnessError::NonPositiveDuration(duration_s));
    }
    let catalog = StepCatalog::from_config(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ STREAM_SALT);
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    let period = cfg.frame_period_s();
    let lo = (cfg.mean_step_s - 2.0 * cfg.step_s_jitter).max(period);
    let hi = (cfg.mean_step_s + 2.0 * cfg.step_s_jitter).max(lo);

    let mut steps = Vec::new();
    let mut t = 0.0;
    let mut previous: Option<u32> = None;
    while t < duration_s {
        let raw = cfg.mean_step_s + cfg.step_s_jitter * jitter.sample(&mut rng);
        let end = (t + raw.clamp(lo, hi)).min(duration_s);
        let classes = cfg.num_step_classes as u32;
        let class = match previous {
            None => rng.gen_range(0..classes),
            Some(p) => (p + rng.gen_range(1..classes)) % classes,
        };
        steps.push(catalog.record(class, t, end)?);
        previous = Some(class);
        t = end;
    }

    let n_frames = (duration_s * cfg.fps).ceil() as u64;
    let mut frames = Vec::with_capacity(n_frames as usize);
    let mut step_idx = 0;
    let mut prototypes = std::collections::HashMap::new();
    for index in 0..n_frames {
        let t_s = index as f64 / cfg.fps;
        while step_idx + 1 < steps.len() && t_s >= steps[step_idx].end_s {
            step_idx += 1;
        }
        let step_id = steps[step_idx].step_id;
        let proto = prototypes
            .entry(step_id)
            .or_insert_with(|| prototype(cfg.seed, cfg.d, step_id));
        let sigma = noise(step_id);
        let feature = proto
            .iter()
            .map(|p| p + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        frames.push(Frame {
            index,
            t_s,
            step_id,
            feature,
            boxes: None,
        });
    }
    Ok(SyntheticStream {
        steps,
        frames,
        fps: cfg.fps,
        seed: cfg.seed,
    })
}

/// Mean over feature dimensions of the per-dimension sample variance
/// across a segment's frames, averaged over the class's segments.
/// Segments with a single frame are skipped.
pub fn temporal_variance(stream: &SyntheticStream, class_id: u32) -> Result<f64, HarnessError> {
    let mut segments: Vec<Vec<&[f64]>> = Vec::new();
    let mut last: Option<u32> = None;
    for f in &stream.frames {
        if f.step_id == class_id {
            if last != Some(class_id) {
                segments.push(Vec::new());
            }
            segments.last_mut().expect("pushed above").push(&f.feature);
        }
        last = Some(f.step_id);
    }
    let per_segment: Vec<f64> = segments
        .iter()
        .filter(|s| s.len() >= 2)
        .map(|seg| {
            let n = seg.len() as f64;
            let d = seg[0].len();
            (0..d)
                .map(|k| {
                    let mean = seg.iter().map(|f| f[k]).sum::<f64>() / n;
                    seg.iter().map(|f| (f[k] - mean).powi(2)).sum::<f64>() / (n - 1.0)
                })
                .sum::<f64>()
                / d as f64
        })
        .collect();
    if per_segment.is_empty() {
        return Err(HarnessError::SingletonClass(class_id));
    }
    Ok(per_segment.iter().sum::<f64>() / per_segment.len() as f64)
}
