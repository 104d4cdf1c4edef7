//! The three caching strategies, driven frame by frame over a stream.
//!
//! Every strategy runs the same per-frame work: append the frame's visual
//! tokens, predict a step, and decode that step's text group through the
//! engine. They differ in what happens to the decoded group and the old
//! frames:
//!
//! * `ProgressiveVisual` keeps every frame and discards every decoded group.
//! * `VerbalizedSeparate` keeps long-term text ahead of the short-term
//!   frames, so each conversion re-attends the whole short-term span.
//! * `Interleaved` enters the group at the tail of one shared cache.
//!
//! Decoded groups that are not kept are evicted from the engine straight
//! away, so they never influence later tokens.

use std::collections::VecDeque;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::predictor::OraclePredictor;
use super::stream::{Frame, SyntheticStream};
use super::HarnessError;
use crate::attention::{AttentionEngine, DecoderWeights, EngineConfig};
use crate::cache::{CacheEvent, InterleavedCache};
use crate::config::{validate_config, SimConfig};
use crate::embedding::EmbeddingTable;
use crate::types::{IdAllocator, Token, TokenId};
use crate::verbalizer::{should_verbalize, PredictionLog, StepCatalog, Verbalizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    ProgressiveVisual,
    VerbalizedSeparate,
    Interleaved,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [
        StrategyKind::ProgressiveVisual,
        StrategyKind::VerbalizedSeparate,
        StrategyKind::Interleaved,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::ProgressiveVisual => "progressive_visual",
            StrategyKind::VerbalizedSeparate => "verbalized_separate",
            StrategyKind::Interleaved => "interleaved",
        }
    }

    /// Short label used on the command line.
    pub fn short(self) -> &'static str {
        match self {
            StrategyKind::ProgressiveVisual => "a1",
            StrategyKind::VerbalizedSeparate => "a2",
            StrategyKind::Interleaved => "b",
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s || k.short() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// Measurements for one processed frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub frame: u64,
    pub t_s: f64,
    /// Tokens held by the engine at the end of the frame.
    pub live_tokens: usize,
    /// Engine multiply-adds for this frame's appends and decoding.
    pub append_flops: u64,
    /// Extra multiply-adds spent re-attending tokens after a conversion.
    pub recompute_flops: u64,
    pub mem_bytes_proxy: u64,
    pub pred: u32,
    pub correct: bool,
    pub verbalized: bool,
    /// Text tokens (marker excluded) committed this frame.
    pub verbalized_tokens: u32,
    pub long_entries: usize,
    pub wall_ns: u64,
}

impl TraceRow {
    pub fn total_flops(&self) -> u64 {
        self.append_flops + self.recompute_flops
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyTrace {
    pub kind: StrategyKind,
    pub rows: Vec<TraceRow>,
    /// First frame that pushed live tokens past `max_live_tokens`; that
    /// frame and everything after it were not processed.
    pub truncated_at: Option<u64>,
    /// Cache event log; only the interleaved strategy records one.
    pub events: Vec<CacheEvent>,
}

impl StrategyTrace {
    pub fn accuracy(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.correct).count() as f64 / self.rows.len() as f64
    }

    pub fn verbalizations(&self) -> usize {
        self.rows.iter().filter(|r| r.verbalized).count()
    }

    pub fn verbalized_text_tokens(&self) -> u64 {
        self.rows.iter().map(|r| u64::from(r.verbalized_tokens)).sum()
    }

    pub fn live_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.live_tokens as f64).collect()
    }
}

/// State shared by all strategies.
struct Runner<'a> {
    cfg: &'a SimConfig,
    engine: AttentionEngine,
    ids: IdAllocator,
    table: EmbeddingTable,
    verbalizer: Verbalizer,
    catalog: StepCatalog,
    predictor: OraclePredictor,
    log: PredictionLog,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self, HarnessError> {
        let weights = DecoderWeights::init(EngineConfig {
            d: cfg.d,
            heads: cfg.n_heads,
            layers: cfg.n_layers,
            vocab_size: cfg.vocab_size,
            seed: cfg.seed,
        })?;
        Ok(Self {
            cfg,
            engine: AttentionEngine::with_weights(Arc::new(weights)).record_attention(false),
            ids: IdAllocator::new(),
            table: EmbeddingTable::new(cfg.seed, cfg.d),
            verbalizer: Verbalizer::from_config(cfg),
            catalog: StepCatalog::from_config(cfg),
            predictor: OraclePredictor::new(cfg.predictor_noise, cfg.num_step_classes, cfg.seed),
            log: PredictionLog::new(cfg.tau),
        })
    }

    fn prompt_tokens(&mut self) -> Vec<Token> {
        (0..self.cfg.prompt_tokens)
            .map(|i| Token::prompt(self.ids.next_id(), self.table.prompt(i)))
            .collect()
    }

    fn visual_tokens(&mut self, frame: &Frame) -> Vec<Token> {
        (0..self.cfg.tokens_per_frame)
            .map(|slot| {
                let mut emb = frame.feature.clone();
                if slot > 0 {
                    for (e, o) in emb.iter_mut().zip(self.table.frame_slot(slot)) {
                        *e += o;
                    }
                }
                Token::visual(self.ids.next_id(), frame.index, emb)
            })
            .collect()
    }

    fn decode_group(&mut self, pred: u32, t_s: f64) -> Result<Vec<Token>, HarnessError> {
        let record = self.catalog.record(pred, t_s, t_s + self.cfg.frame_period_s())?;
        Ok(self.verbalizer.verbalize(&record, &mut self.ids)?)
    }

    /// Appends `group` at consecutive positions from `base`, then drops it.
    fn scratch_decode(&mut self, group: &[Token], base: u64) -> Result<(), HarnessError> {
        for (i, tok) in group.iter().enumerate() {
            self.engine.append(tok.id, &tok.embedding, base + i as u64)?;
        }
        let ids: Vec<TokenId> = group.iter().map(|t| t.id).collect();
        self.engine.evict(&ids)?;
        Ok(())
    }

    fn row(&self, frame: &Frame, pred: u32, flops: (u64, u64), started: Instant) -> TraceRow {
        let live = self.engine.len();
        TraceRow {
            frame: frame.index,
            t_s: frame.t_s,
            live_tokens: live,
            append_flops: flops.0,
            recompute_flops: flops.1,
            mem_bytes_proxy: (live * self.cfg.d * 8) as u64,
            pred,
            correct: pred == frame.step_id,
            verbalized: false,
            verbalized_tokens: 0,
            long_entries: 0,
            wall_ns: started.elapsed().as_nanos() as u64,
        }
    }
}

fn ids_of(tokens: &[Token]) -> Vec<TokenId> {
    tokens.iter().map(|t| t.id).collect()
}

/// Runs one strategy over the whole stream.
pub fn run_strategy(
    kind: StrategyKind,
    stream: &SyntheticStream,
    cfg: &SimConfig,
) -> Result<StrategyTrace, HarnessError> {
    let cfg = validate_config(cfg.clone())?;
    match kind {
        StrategyKind::ProgressiveVisual => run_cached(kind, stream, &cfg, usize::MAX, usize::MAX),
        StrategyKind::Interleaved => run_cached(kind, stream, &cfg, cfg.n_s, cfg.long_capacity()),
        StrategyKind::VerbalizedSeparate => run_separate(stream, &cfg),
    }
}

/// Runs several strategies in parallel over the same stream.
pub fn run_all(
    kinds: &[StrategyKind],
    stream: &SyntheticStream,
    cfg: &SimConfig,
) -> Vec<Result<StrategyTrace, HarnessError>> {
    kinds.par_iter().map(|&k| run_strategy(k, stream, cfg)).collect()
}

/// One interleaved cache. With infinite capacities and no commits this is
/// the progressive visual baseline.
fn run_cached(
    kind: StrategyKind,
    stream: &SyntheticStream,
    cfg: &SimConfig,
    n_s: usize,
    n_l: usize,
) -> Result<StrategyTrace, HarnessError> {
    let verbalizes = kind == StrategyKind::Interleaved;
    let mut r = Runner::new(cfg)?;
    let mut cache = if verbalizes {
        InterleavedCache::with_event_log(n_s, n_l)
    } else {
        InterleavedCache::new(n_s, n_l)
    };
    for tok in r.prompt_tokens() {
        let (id, emb) = (tok.id, tok.embedding.clone());
        let pos = cache.entry(tok)?;
        r.engine.append(id, &emb, pos)?;
    }

    let mut rows = Vec::with_capacity(stream.frames.len());
    let mut truncated_at = None;
    for frame in &stream.frames {
        let started = Instant::now();
        cache.set_clock(frame.t_s);
        let f0 = r.engine.flops_snapshot();
        for tok in r.visual_tokens(frame) {
            let (id, emb) = (tok.id, tok.embedding.clone());
            let pos = cache.entry(tok)?;
            r.engine.append(id, &emb, pos)?;
        }
        let gone = cache.exit_short();
        r.engine.evict(&ids_of(&gone))?;
        if cache.len() > cfg.max_live_tokens {
            truncated_at = Some(frame.index);
            break;
        }

        let pred = r.predictor.predict(frame);
        let group = r.decode_group(pred, frame.t_s)?;
        let keep = verbalizes && should_verbalize(&r.log, pred);
        let text_tokens = group.len() as u32 - 1;
        if keep {
            for tok in group {
                let (id, emb) = (tok.id, tok.embedding.clone());
                let pos = cache.entry(tok)?;
                r.engine.append(id, &emb, pos)?;
            }
            for g in cache.exit_long()? {
                r.engine.evict(&ids_of(&g))?;
            }
        } else {
            r.scratch_decode(&group, cache.next_position())?;
        }
        r.log.push(frame.index, pred);

        let flops = r.engine.flops_snapshot() - f0;
        let mut row = r.row(frame, pred, (flops, 0), started);
        row.verbalized = keep;
        row.verbalized_tokens = if keep { text_tokens } else { 0 };
        row.long_entries = cache.long_entries();
        rows.push(row);
    }
    Ok(StrategyTrace {
        kind,
        rows,
        truncated_at,
        events: cache.take_events(),
    })
}

/// Long-term text and short-term frames in two separate spans, long-term
/// first. Adding text to the long-term span shifts the whole short-term
/// span, which is then re-attended at fresh positions.
fn run_separate(stream: &SyntheticStream, cfg: &SimConfig) -> Result<StrategyTrace, HarnessError> {
    let mut r = Runner::new(cfg)?;
    let mut next_pos = 0u64;
    for tok in r.prompt_tokens() {
        r.engine.append(tok.id, &tok.embedding, next_pos)?;
        next_pos += 1;
    }
    let mut short: VecDeque<Vec<Token>> = VecDeque::new();
    let mut long: VecDeque<Vec<TokenId>> = VecDeque::new();
    let n_l = cfg.long_capacity();

    let mut rows = Vec::with_capacity(stream.frames.len());
    let mut truncated_at = None;
    for frame in &stream.frames {
        let started = Instant::now();
        let f0 = r.engine.flops_snapshot();
        let visual = r.visual_tokens(frame);
        for tok in &visual {
            r.engine.append(tok.id, &tok.embedding, next_pos)?;
            next_pos += 1;
        }
        short.push_back(visual);
        while short.len() > cfg.n_s {
            let old = short.pop_front().expect("len > n_s");
            r.engine.evict(&ids_of(&old))?;
        }
        if r.engine.len() > cfg.max_live_tokens {
            truncated_at = Some(frame.index);
            break;
        }

        let pred = r.predictor.predict(frame);
        let group = r.decode_group(pred, frame.t_s)?;
        let keep = should_verbalize(&r.log, pred);
        r.scratch_decode(&group, next_pos)?;
        let append = r.engine.flops_snapshot() - f0;

        let mut recompute = 0;
        if keep {
            let r0 = r.engine.flops_snapshot();
            let short_ids: Vec<TokenId> = short.iter().flatten().map(|t| t.id).collect();
            r.engine.evict(&short_ids)?;
            for tok in &group {
                r.engine.append(tok.id, &tok.embedding, next_pos)?;
                next_pos += 1;
            }
            long.push_back(ids_of(&group));
            while long.len() > n_l {
                let old = long.pop_front().expect("len > n_l");
                r.engine.evict(&old)?;
            }
            for tok in short.iter().flatten() {
                r.engine.append(tok.id, &tok.embedding, next_pos)?;
                next_pos += 1;
            }
            recompute = r.engine.flops_snapshot() - r0;
        }
        r.log.push(frame.index, pred);

        let mut row = r.row(frame, pred, (append, recompute), started);
        row.verbalized = keep;
        row.verbalized_tokens = if keep { group.len() as u32 - 1 } else { 0 };
        row.long_entries = long.len();
        rows.push(row);
    }
    Ok(StrategyTrace {
        kind: StrategyKind::VerbalizedSeparate,
        rows,
        truncated_at,
        events: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::stream::generate_stream;

    fn small_cfg() -> SimConfig {
        SimConfig {
            d: 16,
            n_s: 16,
            mean_step_s: 8.0,
            step_s_jitter: 2.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn kinds_parse_from_both_spellings() {
        assert_eq!("a1".parse::<StrategyKind>().unwrap(), StrategyKind::ProgressiveVisual);
        assert_eq!("interleaved".parse::<StrategyKind>().unwrap(), StrategyKind::Interleaved);
        assert!("c".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn one_row_per_frame() {
        let cfg = small_cfg();
        let stream = generate_stream(&cfg, 60.0).unwrap();
        for kind in StrategyKind::ALL {
            let trace = run_strategy(kind, &stream, &cfg).unwrap();
            assert_eq!(trace.rows.len(), stream.frames.len(), "{kind}");
            assert!(trace.truncated_at.is_none());
            assert_eq!(trace.accuracy(), 1.0);
        }
    }

    #[test]
    fn progressive_keeps_every_frame() {
        let cfg = small_cfg();
        let stream = generate_stream(&cfg, 30.0).unwrap();
        let trace = run_strategy(StrategyKind::ProgressiveVisual, &stream, &cfg).unwrap();
        for (i, row) in trace.rows.iter().enumerate() {
            assert_eq!(row.live_tokens, cfg.prompt_tokens + i + 1);
            assert!(!row.verbalized);
        }
    }

    #[test]
    fn interleaved_respects_capacities() {
        let cfg = small_cfg();
        let stream = generate_stream(&cfg, 120.0).unwrap();
        let trace = run_strategy(StrategyKind::Interleaved, &stream, &cfg).unwrap();
        let max_group = StepCatalog::from_config(&cfg).mean_token_count().ceil() as usize + 1;
        let n_l = cfg.n_l.unwrap();
        for row in &trace.rows {
            assert!(row.long_entries <= n_l);
            assert!(row.live_tokens <= cfg.prompt_tokens + cfg.n_s * cfg.tokens_per_frame + n_l * max_group);
        }
        assert!(trace.verbalizations() > 0);
        assert!(!trace.events.is_empty());
    }

    #[test]
    fn separate_strategy_charges_recompute_only_on_conversion() {
        let cfg = small_cfg();
        let stream = generate_stream(&cfg, 60.0).unwrap();
        let trace = run_strategy(StrategyKind::VerbalizedSeparate, &stream, &cfg).unwrap();
        for row in &trace.rows {
            assert_eq!(row.recompute_flops > 0, row.verbalized);
        }
    }

    #[test]
    fn memory_cap_truncates() {
        let cfg = SimConfig {
            max_live_tokens: 50,
            ..small_cfg()
        };
        let stream = generate_stream(&cfg, 30.0).unwrap();
        let trace = run_strategy(StrategyKind::ProgressiveVisual, &stream, &cfg).unwrap();
        assert_eq!(trace.truncated_at, Some(46));
        assert_eq!(trace.rows.len(), 46);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = SimConfig {
            n_s: 0,
            ..small_cfg()
        };
        let stream = generate_stream(&small_cfg(), 5.0).unwrap();
        assert!(matches!(
            run_strategy(StrategyKind::Interleaved, &stream, &cfg),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = SimConfig {
            predictor_noise: 0.2,
            ..small_cfg()
        };
        let stream = generate_stream(&cfg, 60.0).unwrap();
        let strip = |mut t: StrategyTrace| {
            t.rows.iter_mut().for_each(|r| r.wall_ns = 0);
            t
        };
        let a = run_all(&StrategyKind::ALL, &stream, &cfg);
        let b = run_all(&StrategyKind::ALL, &stream, &cfg);
        for (x, y) in a.into_iter().zip(b) {
            assert_eq!(strip(x.unwrap()), strip(y.unwrap()));
        }
    }
}
