//! Reference implementations shared by the integration tests. Each is a
//! plain list scan with no indexing so it can be checked by eye.

#![allow(dead_code)]

use std::collections::HashMap;

use mmcache::cache::{CacheEvent, CacheOp, InterleavedCache};
use mmcache::types::{BBox, Token, TokenId, TokenKind};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NaiveToken {
    pub id: u64,
    pub kind: TokenKind,
    pub frame: Option<u64>,
    pub step: Option<u32>,
}

/// The cache as one flat list in entry order.
#[derive(Debug, Default)]
pub struct NaiveCache {
    pub n_s: usize,
    pub n_l: usize,
    pub list: Vec<NaiveToken>,
}

impl NaiveCache {
    pub fn new(n_s: usize, n_l: usize) -> Self {
        Self { n_s, n_l, list: Vec::new() }
    }

    pub fn entry(&mut self, tok: NaiveToken) {
        self.list.push(tok);
    }

    fn frames(&self) -> Vec<u64> {
        let mut seen = Vec::new();
        for t in &self.list {
            if let Some(f) = t.frame {
                if !seen.contains(&f) {
                    seen.push(f);
                }
            }
        }
        seen
    }

    pub fn exit_short(&mut self) -> Vec<u64> {
        let mut gone = Vec::new();
        while self.frames().len() > self.n_s {
            let oldest = self.frames()[0];
            let mut i = 0;
            while i < self.list.len() {
                if self.list[i].frame == Some(oldest) {
                    gone.push(self.list.remove(i).id);
                } else {
                    i += 1;
                }
            }
        }
        gone
    }

    pub fn markers(&self) -> usize {
        self.list.iter().filter(|t| t.kind == TokenKind::LongTermMarker).count()
    }

    pub fn exit_long(&mut self) -> Vec<u64> {
        let mut gone = Vec::new();
        while self.markers() > self.n_l {
            let i = self
                .list
                .iter()
                .position(|t| t.kind == TokenKind::LongTermMarker)
                .unwrap();
            let step = self.list[i].step;
            let mut j = i + 1;
            while j < self.list.len() && self.list[j].kind == TokenKind::Text && self.list[j].step == step {
                j += 1;
            }
            gone.extend(self.list.drain(i..j).map(|t| t.id));
        }
        gone
    }

    pub fn ids(&self) -> Vec<u64> {
        self.list.iter().map(|t| t.id).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceOp {
    Prompt,
    Frame(usize),
    Group { step: u32, texts: usize },
    ExitShort,
    ExitLong,
}

pub fn random_ops(rng: &mut impl Rng, len: usize) -> Vec<TraceOp> {
    (0..len)
        .map(|_| match rng.gen_range(0..100) {
            0..=4 => TraceOp::Prompt,
            5..=44 => TraceOp::Frame(rng.gen_range(1..=3)),
            45..=64 => TraceOp::Group {
                step: rng.gen_range(0..10),
                texts: rng.gen_range(1..=4),
            },
            65..=84 => TraceOp::ExitShort,
            _ => TraceOp::ExitLong,
        })
        .collect()
}

fn real_token(t: &NaiveToken) -> Token {
    let id = TokenId(t.id);
    let emb = vec![0.0; 2];
    match t.kind {
        TokenKind::VisualFrame => Token::visual(id, t.frame.unwrap(), emb),
        TokenKind::Text => Token::text(id, t.step.unwrap(), emb),
        TokenKind::LongTermMarker => Token::marker(id, t.step.unwrap(), emb),
        TokenKind::Prompt => Token::prompt(id, emb),
    }
}

/// Replays `ops` on the real cache and the list reference, checking the
/// cache laws after every step.
pub fn check_cache_trace(ops: &[TraceOp], n_s: usize, n_l: usize) -> Result<(), String> {
    let mut real = InterleavedCache::new(n_s, n_l);
    let mut naive = NaiveCache::new(n_s, n_l);
    let mut next_id = 0u64;
    let mut next_frame = 0u64;
    let mut positions: HashMap<u64, u64> = HashMap::new();

    for (step, op) in ops.iter().enumerate() {
        let mut fresh = Vec::new();
        let mut mk = |kind, frame, step| {
            let t = NaiveToken { id: next_id, kind, frame, step };
            next_id += 1;
            t
        };
        match *op {
            TraceOp::Prompt => fresh.push(mk(TokenKind::Prompt, None, None)),
            TraceOp::Frame(n) => {
                for _ in 0..n {
                    fresh.push(mk(TokenKind::VisualFrame, Some(next_frame), None));
                }
                next_frame += 1;
            }
            TraceOp::Group { step, texts } => {
                fresh.push(mk(TokenKind::LongTermMarker, None, Some(step)));
                for _ in 0..texts {
                    fresh.push(mk(TokenKind::Text, None, Some(step)));
                }
            }
            TraceOp::ExitShort | TraceOp::ExitLong => {}
        }
        for t in fresh {
            let pos = real.entry(real_token(&t)).map_err(|e| format!("step {step}: {e}"))?;
            positions.insert(t.id, pos);
            naive.entry(t);
        }

        let before: Vec<NaiveToken> = naive.list.clone();
        let (got, want): (Vec<u64>, Vec<u64>) = match op {
            TraceOp::ExitShort => (
                real.exit_short().iter().map(|t| t.id.0).collect(),
                naive.exit_short(),
            ),
            TraceOp::ExitLong => (
                real.exit_long()
                    .map_err(|e| format!("step {step}: {e}"))?
                    .iter()
                    .flatten()
                    .map(|t| t.id.0)
                    .collect(),
                naive.exit_long(),
            ),
            _ => (Vec::new(), Vec::new()),
        };
        if got != want {
            return Err(format!("step {step} ({op:?}): evicted {got:?}, reference {want:?}"));
        }

        let snap = real.snapshot();
        let live: Vec<u64> = snap.tokens.iter().map(|t| t.id.0).collect();
        if live != naive.ids() {
            return Err(format!("step {step}: live {live:?}, reference {:?}", naive.ids()));
        }
        for t in &snap.tokens {
            if positions[&t.id.0] != t.position {
                return Err(format!("step {step}: token {} moved", t.id.0));
            }
        }
        if snap.tokens.windows(2).any(|w| w[0].position >= w[1].position) {
            return Err(format!("step {step}: positions not increasing"));
        }
        if want.iter().any(|id| before.iter().any(|t| t.id == *id && t.kind == TokenKind::Prompt)) {
            return Err(format!("step {step}: prompt token evicted"));
        }
        // Everything evicted is older than every survivor of the same kind.
        let evicted: Vec<&NaiveToken> = before.iter().filter(|t| want.contains(&t.id)).collect();
        for e in &evicted {
            if naive.list.iter().any(|s| s.kind == e.kind && s.id < e.id) {
                return Err(format!("step {step}: token {} evicted before an older one", e.id));
            }
        }
        match op {
            TraceOp::ExitShort if snap.visual_frames > n_s => {
                return Err(format!("step {step}: {} frames over N_S={n_s}", snap.visual_frames));
            }
            TraceOp::ExitLong if snap.long_entries > n_l => {
                return Err(format!("step {step}: {} entries over N_L={n_l}", snap.long_entries));
            }
            _ => {}
        }
    }
    Ok(())
}

/// GIoU from corner coordinates.
pub fn giou_reference(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = (a.cx - a.w / 2.0, a.cy - a.h / 2.0, a.cx + a.w / 2.0, a.cy + a.h / 2.0);
    let (bx1, by1, bx2, by2) = (b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    let hull = (ax2.max(bx2) - ax1.min(bx1)) * (ay2.max(by2) - ay1.min(by1));
    inter / union - (hull - union) / hull
}

pub fn cost_reference(gt: &BBox, pred: &BBox) -> f64 {
    let l1 = (gt.cx - pred.cx).abs() + (gt.cy - pred.cy).abs() + (gt.w - pred.w).abs() + (gt.h - pred.h).abs();
    l1 + 1.0 - giou_reference(gt, pred)
}

/// Every injective map from targets to predictions, in lexicographic
/// order; keeps the first one that is strictly cheaper.
pub fn brute_force_match(pred: &[BBox], gt: &[BBox]) -> (f64, Vec<usize>) {
    fn walk(
        pred: &[BBox],
        gt: &[BBox],
        partial: &mut Vec<usize>,
        spent: f64,
        best: &mut (f64, Vec<usize>),
    ) {
        if partial.len() == gt.len() {
            if spent < best.0 - 1e-9 {
                *best = (spent, partial.clone());
            }
            return;
        }
        for j in 0..pred.len() {
            if partial.contains(&j) {
                continue;
            }
            let c = cost_reference(&gt[partial.len()], &pred[j]);
            partial.push(j);
            walk(pred, gt, partial, spent + c, best);
            partial.pop();
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    walk(pred, gt, &mut Vec::new(), 0.0, &mut best);
    best
}

pub fn random_box(rng: &mut impl Rng) -> BBox {
    BBox::new(
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.01..0.6),
        rng.gen_range(0.01..0.6),
    )
    .unwrap()
}

/// One symbolic cache call: operation, kind label and token ordinals.
pub type SymOp = (CacheOp, String, Vec<u64>);

#[derive(Debug, Clone, Copy)]
pub struct LoopShape {
    pub prompt_tokens: usize,
    pub tokens_per_frame: usize,
    pub n_s: usize,
    pub n_l: usize,
    pub tau: usize,
}

/// The streaming loop written out directly over the list reference. Token
/// ids are entry ordinals.
pub fn transcribe_loop(shape: LoopShape, preds: &[u32], group_len: impl Fn(u32) -> usize) -> Vec<SymOp> {
    let mut ops = Vec::new();
    let mut cache = NaiveCache::new(shape.n_s, shape.n_l);
    let mut next = 0u64;
    let mut enter = |cache: &mut NaiveCache, ops: &mut Vec<SymOp>, kind: TokenKind, frame, step| {
        cache.entry(NaiveToken { id: next, kind, frame, step });
        ops.push((CacheOp::Entry, kind.as_str().to_string(), vec![next]));
        next += 1;
    };

    for _ in 0..shape.prompt_tokens {
        enter(&mut cache, &mut ops, TokenKind::Prompt, None, None);
    }
    let mut out: Vec<u32> = Vec::new();
    for (i, &t) in preds.iter().enumerate() {
        for _ in 0..shape.tokens_per_frame {
            enter(&mut cache, &mut ops, TokenKind::VisualFrame, Some(i as u64), None);
        }
        let gone = cache.exit_short();
        ops.push((CacheOp::ExitShort, "visual_frame".into(), gone));
        let recent = &out[out.len().saturating_sub(shape.tau)..];
        if !recent.contains(&t) {
            enter(&mut cache, &mut ops, TokenKind::LongTermMarker, None, Some(t));
            for _ in 0..group_len(t) {
                enter(&mut cache, &mut ops, TokenKind::Text, None, Some(t));
            }
            let gone = cache.exit_long();
            ops.push((CacheOp::ExitLong, "long_term".into(), gone));
        }
        out.push(t);
    }
    ops
}

/// Renames token ids to the order in which they entered.
pub fn normalize_events(events: &[CacheEvent]) -> Vec<SymOp> {
    let mut ordinal: HashMap<TokenId, u64> = HashMap::new();
    events
        .iter()
        .map(|e| {
            if e.op == CacheOp::Entry {
                for id in &e.token_ids {
                    let n = ordinal.len() as u64;
                    ordinal.entry(*id).or_insert(n);
                }
            }
            let ids = e
                .token_ids
                .iter()
                .map(|id| ordinal.get(id).copied().unwrap_or(u64::MAX))
                .collect();
            (e.op, e.kind.clone(), ids)
        })
        .collect()
}

/// Least-squares line through the points: `(slope, intercept, r²)`.
pub fn affine_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let mean = sy / n;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (slope, intercept, r2)
}

/// Appends random tokens with random evictions in between and compares
/// every append with a from-scratch pass over the live sequence. Returns
/// the number of appends and the largest absolute deviation.
pub fn engine_trace(
    cfg: mmcache::attention::EngineConfig,
    seed: u64,
    max_tokens: usize,
) -> Result<(usize, f64), String> {
    use mmcache::attention::{full_recompute, AttentionEngine};
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut engine = AttentionEngine::init(cfg).map_err(|e| e.to_string())?.record_attention(false);
    let weights = std::sync::Arc::clone(engine.weights());
    let mut live: Vec<(TokenId, Vec<f64>, u64)> = Vec::new();
    let n = rng.gen_range(1..=max_tokens);
    let mut pos = 0u64;
    let mut worst = 0.0f64;
    for i in 0..n {
        if !live.is_empty() && rng.gen_bool(0.15) {
            let mut gone = Vec::new();
            live.retain(|(id, _, _)| {
                let drop = rng.gen_bool(0.3);
                if drop {
                    gone.push(*id);
                }
                !drop
            });
            engine.evict(&gone).map_err(|e| e.to_string())?;
        }
        pos += rng.gen_range(1..=3);
        let emb: Vec<f64> = (0..cfg.d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let id = TokenId(i as u64);
        let out = engine.append(id, &emb, pos).map_err(|e| e.to_string())?;
        live.push((id, emb, pos));

        let seq: Vec<(&[f64], u64)> = live.iter().map(|(_, e, p)| (e.as_slice(), *p)).collect();
        let full = full_recompute(&weights, &seq).map_err(|e| e.to_string())?;
        let last = full.last().expect("non-empty");
        let dev = out
            .hidden
            .iter()
            .zip(last)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !(dev <= 1e-6) {
            return Err(format!("seed {seed}, append {i}: deviation {dev:e}"));
        }
        worst = worst.max(dev);
    }
    Ok((n, worst))
}
