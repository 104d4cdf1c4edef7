//! Online verbalization: turning step predictions into long-term text.
//!
//! A prediction is verbalized only when its step id is absent from the last
//! `tau` predictions. A verbalized step becomes one `<L>` marker followed by
//! the step's text tokens.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SimConfig;
use crate::embedding::EmbeddingTable;
use crate::types::{IdAllocator, StepError, StepRecord, Token};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerbalizeError {
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("prediction frames must be strictly ascending (frame {frame} after {previous})")]
    NonAscendingFrames { previous: u64, frame: u64 },
    #[error("step id {0} is not in the catalog")]
    UnknownStep(u32),
    #[error("horizon must be > 0 (got {0})")]
    NonPositiveHorizon(f64),
}

/// The last `tau` predictions, oldest first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionLog {
    tau: usize,
    recent: VecDeque<(u64, u32)>,
}

impl PredictionLog {
    pub fn new(tau: usize) -> Self {
        Self {
            tau,
            recent: VecDeque::with_capacity(tau),
        }
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }

    pub fn push(&mut self, frame: u64, step_id: u32) {
        if self.tau == 0 {
            return;
        }
        if self.recent.len() == self.tau {
            self.recent.pop_front();
        }
        self.recent.push_back((frame, step_id));
    }

    pub fn contains(&self, step_id: u32) -> bool {
        self.recent.iter().any(|&(_, s)| s == step_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(u64, u32)> {
        self.recent.iter()
    }
}

/// True iff `step_id` is absent from the last `tau` predictions.
pub fn should_verbalize(log: &PredictionLog, step_id: u32) -> bool {
    !log.contains(step_id)
}

/// Synthetic vocabulary of step classes: label and text length per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCatalog {
    labels: Vec<String>,
    token_counts: Vec<u32>,
}

impl StepCatalog {
    /// Class `c` gets `floor((c+1)·t) - floor(c·t)` tokens, so the mean over
    /// all classes is `tokens_per_step` up to rounding.
    pub fn new(num_classes: usize, tokens_per_step: f64) -> Self {
        let labels = (0..num_classes).map(|c| format!("step-{c:02}")).collect();
        let token_counts = (0..num_classes)
            .map(|c| {
                let hi = ((c + 1) as f64 * tokens_per_step + 1e-9).floor();
                let lo = (c as f64 * tokens_per_step + 1e-9).floor();
                ((hi - lo) as u32).max(1)
            })
            .collect();
        Self {
            labels,
            token_counts,
        }
    }

    pub fn from_config(cfg: &SimConfig) -> Self {
        Self::new(cfg.num_step_classes, cfg.tokens_per_step)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, step_id: u32) -> Option<&str> {
        self.labels.get(step_id as usize).map(String::as_str)
    }

    pub fn token_count(&self, step_id: u32) -> Option<u32> {
        self.token_counts.get(step_id as usize).copied()
    }

    pub fn mean_token_count(&self) -> f64 {
        self.token_counts.iter().map(|&c| f64::from(c)).sum::<f64>() / self.len() as f64
    }

    pub fn record(&self, step_id: u32, start_s: f64, end_s: f64) -> Result<StepRecord, VerbalizeError> {
        let label = self.label(step_id).ok_or(VerbalizeError::UnknownStep(step_id))?;
        let count = self.token_counts[step_id as usize];
        Ok(StepRecord::new(step_id, label, start_s, end_s, count)?)
    }
}

/// Builds long-term token groups with seeded embeddings.
#[derive(Debug, Clone, Copy)]
pub struct Verbalizer {
    table: EmbeddingTable,
    vocab_size: u32,
    seed: u64,
}

impl Verbalizer {
    pub fn new(table: EmbeddingTable, vocab_size: usize, seed: u64) -> Self {
        Self {
            table,
            vocab_size: vocab_size as u32,
            seed,
        }
    }

    pub fn from_config(cfg: &SimConfig) -> Self {
        Self::new(EmbeddingTable::new(cfg.seed, cfg.d), cfg.vocab_size, cfg.seed)
    }

    /// Vocabulary id of the `index`-th text token of a step. Id 0 is left
    /// free as a sequence start symbol.
    pub fn text_vocab_id(&self, step_id: u32, index: u32) -> u32 {
        let key = (u64::from(step_id) << 32) | u64::from(index);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ key.wrapping_mul(0xA24B_AED4_963E_E407));
        rng.gen_range(1..self.vocab_size.max(2))
    }

    /// `[<L>, text × text_token_count]`, all tagged with the step id.
    pub fn verbalize(
        &self,
        step: &StepRecord,
        ids: &mut IdAllocator,
    ) -> Result<Vec<Token>, VerbalizeError> {
        step.check()?;
        let mut group = Vec::with_capacity(step.text_token_count as usize + 1);
        group.push(Token::marker(ids.next_id(), step.step_id, self.table.marker()));
        for i in 0..step.text_token_count {
            let vocab = self.text_vocab_id(step.step_id, i);
            group.push(Token::text(ids.next_id(), step.step_id, self.table.vocab(vocab)));
        }
        Ok(group)
    }
}

/// Collapses maximal runs of equal step ids into step records. A run over
/// frames `a..=b` spans `[a/fps, (b+1)/fps)`.
pub fn group_consecutive(
    predictions: &[(u64, u32)],
    fps: f64,
    catalog: &StepCatalog,
) -> Result<Vec<StepRecord>, VerbalizeError> {
    let mut records = Vec::new();
    let mut run: Option<(u32, u64, u64)> = None;
    for (i, &(frame, step)) in predictions.iter().enumerate() {
        if i > 0 && frame <= predictions[i - 1].0 {
            return Err(VerbalizeError::NonAscendingFrames {
                previous: predictions[i - 1].0,
                frame,
            });
        }
        run = match run {
            Some((s, first, _)) if s == step => Some((s, first, frame)),
            Some((s, first, last)) => {
                records.push(catalog.record(s, first as f64 / fps, (last + 1) as f64 / fps)?);
                Some((step, frame, frame))
            }
            None => Some((step, frame, frame)),
        };
    }
    if let Some((s, first, last)) = run {
        records.push(catalog.record(s, first as f64 / fps, (last + 1) as f64 / fps)?);
    }
    Ok(records)
}

/// Token cost of a horizon stored as raw frames versus verbalized steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBudgetReport {
    pub horizon_s: f64,
    pub visual_tokens: f64,
    pub steps: f64,
    /// Text tokens only.
    pub verbalized_tokens: f64,
    pub marker_tokens: f64,
    /// `visual_tokens / verbalized_tokens`.
    pub reduction_ratio: f64,
    /// `visual_tokens / (verbalized_tokens + marker_tokens)`.
    pub reduction_ratio_with_markers: f64,
}

pub fn budget_report(cfg: &SimConfig, horizon_s: f64) -> Result<TokenBudgetReport, VerbalizeError> {
    if !(horizon_s.is_finite() && horizon_s > 0.0) {
        return Err(VerbalizeError::NonPositiveHorizon(horizon_s));
    }
    let visual_tokens = cfg.fps * horizon_s * cfg.tokens_per_frame as f64;
    let steps = horizon_s / cfg.mean_step_s;
    let verbalized_tokens = steps * cfg.tokens_per_step;
    let marker_tokens = steps;
    Ok(TokenBudgetReport {
        horizon_s,
        visual_tokens,
        steps,
        verbalized_tokens,
        marker_tokens,
        reduction_ratio: visual_tokens / verbalized_tokens,
        reduction_ratio_with_markers: visual_tokens / (verbalized_tokens + marker_tokens),
    })
}
