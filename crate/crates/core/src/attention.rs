//! Toy causal multi-head attention decoder with a per-token key/value store.
//!
//! Every layer projects keys and values from the token's input embedding,
//! while queries come from the layer's residual stream. Cached keys and
//! values therefore depend only on the token itself and its fixed entry
//! position, so any token can be evicted from the middle of the store
//! without invalidating the others. An append over the survivors is then
//! exactly what a full recompute over the survivor sequence (with the
//! original positions) would produce.
//!
//! Positions enter only through an additive relative bias on
//! `pos_query - pos_key`, clipped at [`MAX_RELATIVE_DISTANCE`].
//!
//! Compute is accounted in multiply-adds. An append at live size `N`
//! (including the new token) costs, per layer, `3d²` for the Q/K/V
//! projections, `N·d` for scores, `N·d` for the value mix and `d²` for the
//! output projection, plus `d·vocab` once for the LM head.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Token, TokenId};

pub const MAX_RELATIVE_DISTANCE: u64 = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("model dim {d} is not divisible by head count {heads}")]
    HeadMismatch { d: usize, heads: usize },
    #[error("engine dimensions must be non-zero")]
    ZeroDim,
    #[error("token {0} is already in the attention store")]
    DuplicateId(TokenId),
    #[error("token {0} is not in the attention store")]
    UnknownId(TokenId),
    #[error("token {0} has no entry position")]
    MissingPosition(TokenId),
    #[error("embedding has dimension {got}, expected {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("position {position} does not follow live position {live_max}")]
    NonCausalPosition { position: u64, live_max: u64 },
    #[error("positions must be strictly increasing (violated at index {0})")]
    UnorderedPositions(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl EngineConfig {
    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    fn validate(&self) -> Result<(), EngineError> {
        if self.d == 0 || self.heads == 0 || self.layers == 0 || self.vocab_size == 0 {
            return Err(EngineError::ZeroDim);
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(EngineError::HeadMismatch {
                d: self.d,
                heads: self.heads,
            });
        }
        Ok(())
    }
}

/// Multiply-add cost of one append, split by where it is spent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlopBreakdown {
    pub projections: u64,
    pub attention: u64,
    pub lm_head: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.projections + self.attention + self.lm_head
    }
}

/// Closed-form cost of appending one token when `n_live` tokens (itself
/// included) are in the store.
pub fn append_flops(cfg: &EngineConfig, n_live: usize) -> FlopBreakdown {
    let (d, l) = (cfg.d as u64, cfg.layers as u64);
    FlopBreakdown {
        projections: l * 4 * d * d,
        attention: l * 2 * n_live as u64 * d,
        lm_head: cfg.vocab_size as u64 * d,
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    /// Per-head slope of the relative position penalty.
    pub slopes: Vec<f64>,
}

impl LayerWeights {
    /// Additive score bias for a key `distance` positions behind the query.
    pub fn bias(&self, head: usize, distance: u64) -> f64 {
        -self.slopes[head] * distance.min(MAX_RELATIVE_DISTANCE) as f64
    }
}

/// Frozen decoder parameters, shared by the incremental engine and the
/// full-recompute oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    pub cfg: EngineConfig,
    pub layers: Vec<LayerWeights>,
    /// `vocab × d`.
    pub lm_head: Matrix,
}

impl DecoderWeights {
    /// Deterministic weights, uniform in `[-1/√d, 1/√d]`.
    pub fn init(cfg: EngineConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        let d = cfg.d;
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let layers = (0..cfg.layers)
            .map(|_| LayerWeights {
                w_q: Matrix::uniform(d, d, bound, &mut rng),
                w_k: Matrix::uniform(d, d, bound, &mut rng),
                w_v: Matrix::uniform(d, d, bound, &mut rng),
                w_o: Matrix::uniform(d, d, bound, &mut rng),
                // ALiBi-style geometric slopes, flattened so distant tokens
                // still carry weight.
                slopes: (0..cfg.heads)
                    .map(|h| 2f64.powf(-8.0 * (h + 1) as f64 / cfg.heads as f64) / 16.0)
                    .collect(),
            })
            .collect();
        let lm_head = Matrix::uniform(cfg.vocab_size, d, bound, &mut rng);
        Ok(Self {
            cfg,
            layers,
            lm_head,
        })
    }

    pub fn logits(&self, hidden: &[f64]) -> Vec<f64> {
        self.lm_head.matvec(hidden)
    }
}

#[derive(Debug, Clone)]
struct LayerKv {
    keys: Vec<f64>,
    values: Vec<f64>,
}

/// Result of one incremental append.
#[derive(Debug, Clone)]
pub struct AppendOutput {
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    /// `attention[layer][head][slot]`, over the live store in slot order
    /// (the new token is the last slot).
    pub attention: Vec<Vec<Vec<f64>>>,
    pub flops: FlopBreakdown,
}

/// Incremental decoder state for one stream.
#[derive(Debug, Clone)]
pub struct AttentionEngine {
    weights: Arc<DecoderWeights>,
    ids: Vec<TokenId>,
    positions: Vec<u64>,
    slot_of: HashMap<TokenId, usize>,
    layers: Vec<LayerKv>,
    flops: u64,
    keep_attention: bool,
}

impl AttentionEngine {
    pub fn init(cfg: EngineConfig) -> Result<Self, EngineError> {
        Ok(Self::with_weights(Arc::new(DecoderWeights::init(cfg)?)))
    }

    pub fn with_weights(weights: Arc<DecoderWeights>) -> Self {
        let layers = vec![
            LayerKv {
                keys: Vec::new(),
                values: Vec::new()
            };
            weights.cfg.layers
        ];
        Self {
            weights,
            ids: Vec::new(),
            positions: Vec::new(),
            slot_of: HashMap::new(),
            layers,
            flops: 0,
            keep_attention: true,
        }
    }

    /// When off, [`AppendOutput::attention`] is left empty. Long runs that
    /// only need hidden states and FLOP counts skip copying every row.
    pub fn record_attention(mut self, on: bool) -> Self {
        self.keep_attention = on;
        self
    }

    pub fn weights(&self) -> &Arc<DecoderWeights> {
        &self.weights
    }

    pub fn config(&self) -> &EngineConfig {
        &self.weights.cfg
    }

    /// Cumulative multiply-adds since construction. Never decreases.
    pub fn flops_snapshot(&self) -> u64 {
        self.flops
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.slot_of.contains_key(&id)
    }

    pub fn position_of(&self, id: TokenId) -> Option<u64> {
        self.slot_of.get(&id).map(|&s| self.positions[s])
    }

    /// Stored ids, sorted.
    pub fn stored_ids(&self) -> Vec<TokenId> {
        let mut ids = self.ids.clone();
        ids.sort_unstable();
        ids
    }

    /// Appends a cache token using its stamped entry position.
    pub fn append_token(&mut self, token: &Token) -> Result<AppendOutput, EngineError> {
        let position = token
            .entry_position
            .ok_or(EngineError::MissingPosition(token.id))?;
        self.append(token.id, &token.embedding, position)
    }

    /// Attends the new token over the live store plus itself, then stores
    /// its keys and values.
    pub fn append(
        &mut self,
        id: TokenId,
        embedding: &[f64],
        position: u64,
    ) -> Result<AppendOutput, EngineError> {
        let cfg = self.weights.cfg;
        if embedding.len() != cfg.d {
            return Err(EngineError::DimMismatch {
                expected: cfg.d,
                got: embedding.len(),
            });
        }
        if self.slot_of.contains_key(&id) {
            return Err(EngineError::DuplicateId(id));
        }
        if let Some(&live_max) = self.positions.iter().max() {
            if position <= live_max {
                return Err(EngineError::NonCausalPosition { position, live_max });
            }
        }

        let slot = self.ids.len();
        self.ids.push(id);
        self.positions.push(position);
        self.slot_of.insert(id, slot);
        let n = slot + 1;

        let (d, dh) = (cfg.d, cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        let weights = Arc::clone(&self.weights);
        let mut hidden = embedding.to_vec();
        let mut attention = Vec::with_capacity(cfg.layers);
        let mut scores = vec![0.0; n];

        for (layer, kv) in weights.layers.iter().zip(self.layers.iter_mut()) {
            kv.keys.extend(layer.w_k.matvec(embedding));
            kv.values.extend(layer.w_v.matvec(embedding));
            let q = layer.w_q.matvec(&hidden);
            let mut mixed = vec![0.0; d];
            let mut per_head = Vec::with_capacity(cfg.heads);

            for h in 0..cfg.heads {
                let span = h * dh..(h + 1) * dh;
                let q_h = &q[span.clone()];
                let mut max = f64::NEG_INFINITY;
                for (i, s) in scores.iter_mut().enumerate() {
                    let k = &kv.keys[i * d..(i + 1) * d][span.clone()];
                    *s = dot(q_h, k) * scale + layer.bias(h, position - self.positions[i]);
                    max = max.max(*s);
                }
                let mut denom = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    denom += *s;
                }
                let out = &mut mixed[span.clone()];
                for (i, s) in scores.iter_mut().enumerate() {
                    *s /= denom;
                    let v = &kv.values[i * d..(i + 1) * d][span.clone()];
                    for (o, x) in out.iter_mut().zip(v) {
                        *o += *s * x;
                    }
                }
                if self.keep_attention {
                    per_head.push(scores.clone());
                }
            }
            for (x, o) in hidden.iter_mut().zip(layer.w_o.matvec(&mixed)) {
                *x += o;
            }
            if self.keep_attention {
                attention.push(per_head);
            }
        }

        let logits = weights.logits(&hidden);
        let flops = append_flops(&cfg, n);
        self.flops += flops.total();
        Ok(AppendOutput {
            hidden,
            logits,
            attention,
            flops,
        })
    }

    /// Drops the given tokens' keys and values. Survivors keep their
    /// positions; nothing is recomputed.
    pub fn evict(&mut self, ids: &[TokenId]) -> Result<(), EngineError> {
        let mut seen = std::collections::HashSet::with_capacity(ids.len());
        for &id in ids {
            if !self.slot_of.contains_key(&id) || !seen.insert(id) {
                return Err(EngineError::UnknownId(id));
            }
        }
        let d = self.weights.cfg.d;
        for &id in ids {
            let slot = self.slot_of.remove(&id).expect("validated above");
            let last = self.ids.len() - 1;
            self.ids.swap_remove(slot);
            self.positions.swap_remove(slot);
            for kv in &mut self.layers {
                if slot != last {
                    kv.keys.copy_within(last * d..(last + 1) * d, slot * d);
                    kv.values.copy_within(last * d..(last + 1) * d, slot * d);
                }
                kv.keys.truncate(last * d);
                kv.values.truncate(last * d);
            }
            if slot != last {
                self.slot_of.insert(self.ids[slot], slot);
            }
        }
        Ok(())
    }
}

/// Reference forward pass: causal attention over the whole sequence at once.
///
/// `tokens` are `(embedding, position)` pairs in strictly increasing
/// position order. Returns the final hidden state of every row.
pub fn full_recompute(
    weights: &DecoderWeights,
    tokens: &[(&[f64], u64)],
) -> Result<Vec<Vec<f64>>, EngineError> {
    let cfg = weights.cfg;
    let (d, dh, n) = (cfg.d, cfg.head_dim(), tokens.len());
    for (i, (emb, _)) in tokens.iter().enumerate() {
        if emb.len() != d {
            return Err(EngineError::DimMismatch {
                expected: d,
                got: emb.len(),
            });
        }
        if i > 0 && tokens[i].1 <= tokens[i - 1].1 {
            return Err(EngineError::UnorderedPositions(i));
        }
    }

    let project = |m: &Matrix, rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter().map(|r| m.matvec(r)).collect()
    };
    let embeddings: Vec<Vec<f64>> = tokens.iter().map(|(e, _)| e.to_vec()).collect();
    let mut hidden = embeddings.clone();
    let scale = 1.0 / (dh as f64).sqrt();

    for layer in &weights.layers {
        let keys = project(&layer.w_k, &embeddings);
        let values = project(&layer.w_v, &embeddings);
        let queries = project(&layer.w_q, &hidden);
        let mut concat = vec![vec![0.0; d]; n];
        for h in 0..cfg.heads {
            let lo = h * dh;
            for i in 0..n {
                // Row i of the masked score matrix; columns > i are excluded.
                let row: Vec<f64> = (0..=i)
                    .map(|j| {
                        let qk: f64 = (lo..lo + dh).map(|c| queries[i][c] * keys[j][c]).sum();
                        qk * scale + layer.bias(h, tokens[i].1 - tokens[j].1)
                    })
                    .collect();
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for c in lo..lo + dh {
                    concat[i][c] = (0..=i).map(|j| exps[j] / z * values[j][c]).sum();
                }
            }
        }
        for (h, c) in hidden.iter_mut().zip(&concat) {
            for (x, o) in h.iter_mut().zip(layer.w_o.matvec(c)) {
                *x += o;
            }
        }
    }
    Ok(hidden)
}
