//! Cross-attention connector: learnable queries attend over a patch grid.
//!
//! All trainable weights live in one flat vector so the trainer and the
//! finite-difference checker can treat them uniformly. Keys and values are
//! linear projections of the patches; each query output keeps a residual
//! copy of the query. Visual-query outputs are projected to compressed
//! tokens, hand and object outputs go through a shared two-layer box head.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::loss::{loss_ho_with_grad, loss_lm_with_grad, loss_total, BoxPrediction, LossError};
use super::matching::{hungarian_match, MatchError};
use super::scene::{PatchGrid, Scene};
use crate::types::BBox;

pub const HAND_QUERIES: usize = 2;

#[derive(Debug, Error)]
pub enum ConnectorError {
    #[error("invalid connector config: {0}")]
    Config(String),
    #[error("{what}: expected {expected}, got {got}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Match(#[from] MatchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectorConfig {
    /// Patch feature dimension `D`.
    pub patch_dim: usize,
    pub grid_side: usize,
    /// Query and output token dimension.
    pub d: usize,
    /// Width of the box MLP.
    pub hidden: usize,
    /// Visual queries.
    pub m: usize,
    /// Object queries.
    pub k: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ConnectorConfig {
    fn default() -> Self {
        Self {
            patch_dim: 32,
            grid_side: 16,
            d: 16,
            hidden: 16,
            m: 12,
            k: 2,
            vocab_size: 64,
            seed: 0,
        }
    }
}

impl ConnectorConfig {
    pub fn validate(&self) -> Result<(), ConnectorError> {
        let positive = [
            ("patch_dim", self.patch_dim),
            ("grid_side", self.grid_side),
            ("d", self.d),
            ("hidden", self.hidden),
            ("k", self.k),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConnectorError::Config(format!("{name} must be ≥ 1")));
            }
        }
        Ok(())
    }

    pub fn num_queries(&self) -> usize {
        self.m + HAND_QUERIES + self.k
    }

    pub fn num_boxes(&self) -> usize {
        HAND_QUERIES + self.k
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }
}

/// Offsets of each weight block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub queries: Range<usize>,
    pub w_k: Range<usize>,
    pub w_v: Range<usize>,
    pub w_t: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub total: usize,
}

impl ParamLayout {
    fn new(cfg: &ConnectorConfig) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let queries = take(cfg.num_queries() * cfg.d);
        let w_k = take(cfg.d * cfg.patch_dim);
        let w_v = take(cfg.d * cfg.patch_dim);
        let w_t = take(cfg.d * cfg.d);
        let w1 = take(cfg.hidden * cfg.d);
        let b1 = take(cfg.hidden);
        let w2 = take(5 * cfg.hidden);
        let b2 = take(5);
        Self {
            queries,
            w_k,
            w_v,
            w_t,
            w1,
            b1,
            w2,
            b2,
            total: at,
        }
    }
}

/// Language-decoder stand-in that stays fixed during training: next-token
/// logits are `W_dec · (mean(tokens) + E[previous token])`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenDecoder {
    pub vocab_size: usize,
    pub d: usize,
    pub w_dec: Vec<f64>,
    pub emb: Vec<f64>,
}

impl FrozenDecoder {
    pub fn init(vocab_size: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdec0_de00);
        let bound = 1.0 / (d as f64).sqrt();
        let w_dec = (0..vocab_size * d).map(|_| rng.gen_range(-bound..bound)).collect();
        let emb = (0..vocab_size * d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            vocab_size,
            d,
            w_dec,
            emb,
        }
    }

    /// Teacher-forced logits for `caption`, with id 0 as the start token.
    pub fn logits(&self, tokens: &[Vec<f64>], caption: &[u32]) -> Vec<Vec<f64>> {
        let pooled = mean_rows(tokens, self.d);
        let mut prev = 0usize;
        caption
            .iter()
            .map(|&t| {
                let e = &self.emb[prev * self.d..(prev + 1) * self.d];
                let input: Vec<f64> = pooled.iter().zip(e).map(|(a, b)| a + b).collect();
                prev = (t as usize).min(self.vocab_size - 1);
                matvec(&self.w_dec, self.vocab_size, self.d, &input)
            })
            .collect()
    }
}

/// Read-only view of the three query groups.
#[derive(Debug, Clone, Copy)]
pub struct QuerySet<'a> {
    pub d: usize,
    pub visual: &'a [f64],
    pub hands: &'a [f64],
    pub objects: &'a [f64],
}

impl<'a> QuerySet<'a> {
    pub fn m(&self) -> usize {
        self.visual.len() / self.d
    }

    pub fn k(&self) -> usize {
        self.objects.len() / self.d
    }

    pub fn len(&self) -> usize {
        (self.visual.len() + self.hands.len() + self.objects.len()) / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectorOutput {
    /// One `d`-vector per visual query.
    pub tokens: Vec<Vec<f64>>,
    /// Hand predictions first, then objects.
    pub boxes: Vec<BoxPrediction>,
    /// Per query, weights over patches.
    pub attention: Vec<Vec<f64>>,
}

impl ConnectorOutput {
    pub fn hands(&self) -> &[BoxPrediction] {
        &self.boxes[..HAND_QUERIES]
    }

    pub fn objects(&self) -> &[BoxPrediction] {
        &self.boxes[HAND_QUERIES..]
    }
}

/// Loss components for one scene.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub lm: f64,
    pub ho: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Connector {
    cfg: ConnectorConfig,
    layout: ParamLayout,
    pub params: Vec<f64>,
    pub decoder: FrozenDecoder,
}

// ── Small dense helpers ─────────────────────────────────────────────

fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn matvec_t_add(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        if y[r] == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += a * y[r];
        }
    }
}

fn outer_add(g: &mut [f64], cols: usize, left: &[f64], right: &[f64]) {
    for (r, &l) in left.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        for (gv, rv) in g[r * cols..(r + 1) * cols].iter_mut().zip(right) {
            *gv += l * rv;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mean_rows(rows: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    if rows.is_empty() {
        return out;
    }
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ── Forward pass ────────────────────────────────────────────────────

struct Cache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    attention: Vec<Vec<f64>>,
    outs: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    heads: Vec<[f64; 5]>,
    tokens: Vec<Vec<f64>>,
}

fn forward_cached(cfg: &ConnectorConfig, lay: &ParamLayout, p: &[f64], grid: &PatchGrid) -> Cache {
    let (d, dim) = (cfg.d, cfg.patch_dim);
    let patches: Vec<&[f64]> = (0..grid.num_patches()).map(|i| grid.patch(i)).collect();
    let keys: Vec<Vec<f64>> = patches.iter().map(|x| matvec(&p[lay.w_k.clone()], d, dim, x)).collect();
    let values: Vec<Vec<f64>> = patches.iter().map(|x| matvec(&p[lay.w_v.clone()], d, dim, x)).collect();
    let scale = 1.0 / (d as f64).sqrt();
    let queries = &p[lay.queries.clone()];

    let mut attention = Vec::with_capacity(cfg.num_queries());
    let mut outs = Vec::with_capacity(cfg.num_queries());
    for q in queries.chunks(d) {
        let scores: Vec<f64> = keys.iter().map(|k| dot(q, k) * scale).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let a: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let mut o = q.to_vec();
        for (w, v) in a.iter().zip(&values) {
            for (oi, vi) in o.iter_mut().zip(v) {
                *oi += w * vi;
            }
        }
        attention.push(a);
        outs.push(o);
    }

    let tokens = outs[..cfg.m]
        .iter()
        .map(|o| matvec(&p[lay.w_t.clone()], d, d, o))
        .collect();
    let mut hidden = Vec::new();
    let mut heads = Vec::new();
    for o in &outs[cfg.m..] {
        let pre = matvec(&p[lay.w1.clone()], cfg.hidden, d, o);
        let h: Vec<f64> = pre
            .iter()
            .zip(&p[lay.b1.clone()])
            .map(|(a, b)| (a + b).tanh())
            .collect();
        let z = matvec(&p[lay.w2.clone()], 5, cfg.hidden, &h);
        let b2 = &p[lay.b2.clone()];
        let mut s = [0.0; 5];
        for i in 0..5 {
            s[i] = sigmoid(z[i] + b2[i]);
        }
        hidden.push(h);
        heads.push(s);
    }
    Cache {
        keys,
        values,
        attention,
        outs,
        hidden,
        heads,
        tokens,
    }
}

fn head_to_box(s: &[f64; 5]) -> BoxPrediction {
    BoxPrediction {
        bbox: BBox {
            cx: s[0],
            cy: s[1],
            w: s[2],
            h: s[3],
        },
        score: s[4],
    }
}

impl Connector {
    pub fn init(cfg: ConnectorConfig) -> Result<Self, ConnectorError> {
        cfg.validate()?;
        let layout = cfg.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = vec![0.0; layout.total];
        let mut fill = |range: Range<usize>, bound: f64, rng: &mut ChaCha8Rng| {
            for v in &mut params[range] {
                *v = rng.gen_range(-bound..bound);
            }
        };
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        fill(layout.queries.clone(), 1.0, &mut rng);
        fill(layout.w_k.clone(), inv(cfg.patch_dim), &mut rng);
        fill(layout.w_v.clone(), inv(cfg.patch_dim), &mut rng);
        fill(layout.w_t.clone(), inv(cfg.d), &mut rng);
        fill(layout.w1.clone(), inv(cfg.d), &mut rng);
        fill(layout.w2.clone(), inv(cfg.hidden), &mut rng);
        // Start with mid-sized boxes and a low objectness score.
        params[layout.b2.clone()].copy_from_slice(&[0.0, 0.0, -1.0, -1.0, -2.0]);
        let decoder = FrozenDecoder::init(cfg.vocab_size, cfg.d, cfg.seed);
        Ok(Self {
            cfg,
            layout,
            params,
            decoder,
        })
    }

    pub fn config(&self) -> &ConnectorConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn queries(&self) -> QuerySet<'_> {
        let q = &self.params[self.layout.queries.clone()];
        let d = self.cfg.d;
        let (visual, rest) = q.split_at(self.cfg.m * d);
        let (hands, objects) = rest.split_at(HAND_QUERIES * d);
        QuerySet {
            d,
            visual,
            hands,
            objects,
        }
    }

    fn check_grid(&self, grid: &PatchGrid) -> Result<(), ConnectorError> {
        if grid.dim() != self.cfg.patch_dim {
            return Err(ConnectorError::DimMismatch {
                what: "patch dimension",
                expected: self.cfg.patch_dim,
                got: grid.dim(),
            });
        }
        if grid.side() != self.cfg.grid_side {
            return Err(ConnectorError::DimMismatch {
                what: "grid side",
                expected: self.cfg.grid_side,
                got: grid.side(),
            });
        }
        Ok(())
    }

    fn check_params(&self, params: &[f64]) -> Result<(), ConnectorError> {
        if params.len() != self.layout.total {
            return Err(ConnectorError::DimMismatch {
                what: "parameter count",
                expected: self.layout.total,
                got: params.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, grid: &PatchGrid) -> Result<ConnectorOutput, ConnectorError> {
        self.forward_with(&self.params, grid)
    }

    /// Forward pass using `params` in place of the stored weights.
    pub fn forward_with(&self, params: &[f64], grid: &PatchGrid) -> Result<ConnectorOutput, ConnectorError> {
        self.check_params(params)?;
        self.check_grid(grid)?;
        let c = forward_cached(&self.cfg, &self.layout, params, grid);
        Ok(ConnectorOutput {
            tokens: c.tokens,
            boxes: c.heads.iter().map(head_to_box).collect(),
            attention: c.attention,
        })
    }

    /// Matches hand predictions to hand boxes and object predictions to
    /// object boxes. Returned indices address the full box list.
    pub fn assignment(&self, out: &ConnectorOutput, scene: &Scene) -> Result<Vec<usize>, ConnectorError> {
        let hands: Vec<BBox> = out.hands().iter().map(|b| b.bbox).collect();
        let objects: Vec<BBox> = out.objects().iter().map(|b| b.bbox).collect();
        let mut sigma = hungarian_match(&hands, &scene.hands)?;
        sigma.extend(
            hungarian_match(&objects, &scene.objects)?
                .into_iter()
                .map(|j| j + HAND_QUERIES),
        );
        Ok(sigma)
    }

    pub fn loss(&self, params: &[f64], scene: &Scene, lambda_1: f64) -> Result<LossParts, ConnectorError> {
        let out = self.forward_with(params, &scene.grid)?;
        let sigma = self.assignment(&out, scene)?;
        let gt: Vec<BBox> = scene.hands.iter().chain(&scene.objects).copied().collect();
        let (ho, _) = loss_ho_with_grad(&out.boxes, &gt, &sigma)?;
        let logits = self.decoder.logits(&out.tokens, &scene.caption);
        let (lm, _) = loss_lm_with_grad(&logits, &scene.caption)?;
        Ok(LossParts {
            lm,
            ho,
            total: loss_total(lm, ho, lambda_1)?,
        })
    }

    /// Loss and its gradient with respect to every trainable parameter.
    pub fn loss_and_grad(
        &self,
        params: &[f64],
        scene: &Scene,
        lambda_1: f64,
    ) -> Result<(LossParts, Vec<f64>), ConnectorError> {
        self.check_params(params)?;
        self.check_grid(&scene.grid)?;
        let (cfg, lay) = (&self.cfg, &self.layout);
        let (d, dim, hid) = (cfg.d, cfg.patch_dim, cfg.hidden);
        let c = forward_cached(cfg, lay, params, &scene.grid);
        let boxes: Vec<BoxPrediction> = c.heads.iter().map(head_to_box).collect();
        let out = ConnectorOutput {
            tokens: c.tokens.clone(),
            boxes,
            attention: Vec::new(),
        };
        let sigma = self.assignment(&out, scene)?;
        let gt: Vec<BBox> = scene.hands.iter().chain(&scene.objects).copied().collect();
        let (ho, box_grads) = loss_ho_with_grad(&out.boxes, &gt, &sigma)?;
        let logits = self.decoder.logits(&c.tokens, &scene.caption);
        let (lm, logit_grads) = loss_lm_with_grad(&logits, &scene.caption)?;
        let parts = LossParts {
            lm,
            ho,
            total: loss_total(lm, ho, lambda_1)?,
        };

        let mut g = vec![0.0; lay.total];
        let mut d_out = vec![vec![0.0; d]; cfg.num_queries()];

        // Box head.
        for (b, (s, bg)) in c.heads.iter().zip(&box_grads).enumerate() {
            let dz: Vec<f64> = (0..5).map(|i| lambda_1 * bg[i] * s[i] * (1.0 - s[i])).collect();
            let h = &c.hidden[b];
            outer_add(&mut g[lay.w2.clone()], hid, &dz, h);
            for (gv, z) in g[lay.b2.clone()].iter_mut().zip(&dz) {
                *gv += z;
            }
            let mut dh = vec![0.0; hid];
            matvec_t_add(&params[lay.w2.clone()], 5, hid, &dz, &mut dh);
            let dpre: Vec<f64> = dh.iter().zip(h).map(|(g, h)| g * (1.0 - h * h)).collect();
            let o = &c.outs[cfg.m + b];
            outer_add(&mut g[lay.w1.clone()], d, &dpre, o);
            for (gv, p) in g[lay.b1.clone()].iter_mut().zip(&dpre) {
                *gv += p;
            }
            matvec_t_add(&params[lay.w1.clone()], hid, d, &dpre, &mut d_out[cfg.m + b]);
        }

        // Visual tokens through the frozen decoder's mean pooling.
        if cfg.m > 0 {
            let mut d_pooled = vec![0.0; d];
            for dl in &logit_grads {
                matvec_t_add(&self.decoder.w_dec, cfg.vocab_size, d, dl, &mut d_pooled);
            }
            let dt: Vec<f64> = d_pooled.iter().map(|v| v / cfg.m as f64).collect();
            for i in 0..cfg.m {
                outer_add(&mut g[lay.w_t.clone()], d, &dt, &c.outs[i]);
                matvec_t_add(&params[lay.w_t.clone()], d, d, &dt, &mut d_out[i]);
            }
        }

        // Cross-attention.
        let scale = 1.0 / (d as f64).sqrt();
        let queries = &params[lay.queries.clone()];
        let n_patches = scene.grid.num_patches();
        for (i, q) in queries.chunks(d).enumerate() {
            let dout = &d_out[i];
            if dout.iter().all(|v| *v == 0.0) {
                continue;
            }
            let a = &c.attention[i];
            for (gq, v) in g[lay.queries.clone()][i * d..(i + 1) * d].iter_mut().zip(dout) {
                *gq += v;
            }
            let da: Vec<f64> = c.values.iter().map(|v| dot(dout, v)).collect();
            let mean_da = dot(a, &da);
            let ds: Vec<f64> = a.iter().zip(&da).map(|(a, x)| a * (x - mean_da) * scale).collect();

            let mut xbar = vec![0.0; dim];
            let mut xs = vec![0.0; dim];
            let mut dq = vec![0.0; d];
            for p in 0..n_patches {
                let x = scene.grid.patch(p);
                for c_ in 0..dim {
                    xbar[c_] += a[p] * x[c_];
                    xs[c_] += ds[p] * x[c_];
                }
                for (dqv, k) in dq.iter_mut().zip(&c.keys[p]) {
                    *dqv += ds[p] * k;
                }
            }
            outer_add(&mut g[lay.w_v.clone()], dim, dout, &xbar);
            outer_add(&mut g[lay.w_k.clone()], dim, q, &xs);
            for (gq, v) in g[lay.queries.clone()][i * d..(i + 1) * d].iter_mut().zip(&dq) {
                *gq += v;
            }
        }
        Ok((parts, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qformer::scene::SceneSpec;

    fn small(m: usize) -> ConnectorConfig {
        ConnectorConfig {
            patch_dim: 6,
            grid_side: 4,
            d: 4,
            hidden: 5,
            m,
            k: 2,
            vocab_size: 10,
            seed: 1,
        }
    }

    fn scene(cfg: &ConnectorConfig, seed: u64) -> Scene {
        Scene::synthetic(seed, SceneSpec {
            side: cfg.grid_side,
            patch_dim: cfg.patch_dim,
            caption_len: 4,
            vocab_size: cfg.vocab_size,
            ..SceneSpec::default()
        })
    }

    #[test]
    fn output_shapes() {
        for (m, k) in [(12, 2), (0, 2), (3, 1)] {
            let cfg = ConnectorConfig {
                m,
                k,
                ..ConnectorConfig::default()
            };
            let conn = Connector::init(cfg).unwrap();
            let grid = Scene::synthetic(0, SceneSpec::default()).grid;
            let out = conn.forward(&grid).unwrap();
            assert_eq!(out.tokens.len(), m);
            assert_eq!(out.boxes.len(), 2 + k);
            assert!(out.boxes.iter().all(|b| (0.0..=1.0).contains(&b.score)));
            assert_eq!(conn.queries().len(), m + 2 + k);
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let conn = Connector::init(ConnectorConfig::default()).unwrap();
        let grid = Scene::synthetic(4, SceneSpec::default()).grid;
        for row in conn.forward(&grid).unwrap().attention {
            assert!(row.iter().all(|w| *w >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_grid_gives_uniform_attention() {
        let cfg = ConnectorConfig::default();
        let mut conn = Connector::init(cfg).unwrap();
        let q = conn.layout().queries.clone();
        let first: Vec<f64> = conn.params[q.start..q.start + cfg.d].to_vec();
        for chunk in conn.params[q].chunks_mut(cfg.d) {
            chunk.copy_from_slice(&first);
        }
        let grid = PatchGrid::uniform(16, &vec![0.7; cfg.patch_dim]).unwrap();
        let out = conn.forward(&grid).unwrap();
        for row in &out.attention {
            assert!(row.iter().all(|w| (w - 1.0 / 256.0).abs() < 1e-15));
        }
        assert!(out.boxes.iter().all(|b| *b == out.boxes[0]));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let conn = Connector::init(ConnectorConfig::default()).unwrap();
        let grid = PatchGrid::uniform(16, &[0.0; 5]).unwrap();
        assert!(matches!(conn.forward(&grid), Err(ConnectorError::DimMismatch { .. })));
        let grid = PatchGrid::uniform(4, &[0.0; 32]).unwrap();
        assert!(conn.forward(&grid).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        for m in [0, 3] {
            let cfg = small(m);
            let conn = Connector::init(cfg).unwrap();
            let sc = scene(&cfg, 2);
            let (_, g) = conn.loss_and_grad(&conn.params, &sc, 2.0).unwrap();
            let eps = 1e-6;
            for i in 0..conn.params.len() {
                let mut p = conn.params.clone();
                p[i] += eps;
                let up = conn.loss(&p, &sc, 2.0).unwrap().total;
                p[i] -= 2.0 * eps;
                let down = conn.loss(&p, &sc, 2.0).unwrap().total;
                let fd = (up - down) / (2.0 * eps);
                assert!((fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()), "coord {i}: {fd} vs {}", g[i]);
            }
        }
    }
}
