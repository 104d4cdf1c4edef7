//! Multimodal interleaved cache.
//!
//! One FIFO queue holds visual frame tokens, verbalized step groups
//! (`<L>` marker followed by its text tokens) and pinned prompt tokens.
//! Tokens enter through a single [`InterleavedCache::entry`] and leave
//! through two typed exits:
//!
//! * [`InterleavedCache::exit_short`] drops the oldest frames until at most
//!   `N_S` frames remain.
//! * [`InterleavedCache::exit_long`] drops the oldest step groups (marker plus
//!   its contiguous same-step text) until at most `N_L` remain.
//!
//! Exits are explicit calls; `entry` never evicts. Prompt tokens are never
//! touched by either exit.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Token, TokenError, TokenId, TokenKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CacheError {
    #[error("token {0} is already in the cache")]
    DuplicateId(TokenId),
    #[error("token {0} already entered a cache once")]
    AlreadyPositioned(TokenId),
    #[error(transparent)]
    InvalidToken(#[from] TokenError),
    #[error("long-term marker {marker} (step {step_id}) has no attached text tokens")]
    OrphanMarker { marker: TokenId, step_id: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheOp {
    Entry,
    ExitShort,
    ExitLong,
}

/// One line of the cache event log (JSONL).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEvent {
    /// Stream time in seconds when the call happened.
    pub t: f64,
    pub op: CacheOp,
    pub token_ids: Vec<TokenId>,
    pub kind: String,
}

/// Metadata of a live token, without its embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMeta {
    pub id: TokenId,
    pub kind: TokenKind,
    pub position: u64,
    pub frame_index: Option<u64>,
    pub step_id: Option<u32>,
}

/// Immutable view of the cache at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSnapshot {
    pub tokens: Vec<TokenMeta>,
    pub visual_frames: usize,
    pub long_entries: usize,
}

impl CacheSnapshot {
    pub fn ids(&self) -> Vec<TokenId> {
        self.tokens.iter().map(|t| t.id).collect()
    }
}

#[derive(Debug, Clone)]
struct FrameSlot {
    frame_index: u64,
    positions: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct InterleavedCache {
    n_s: usize,
    n_l: usize,
    tokens: BTreeMap<u64, Token>,
    by_id: HashMap<TokenId, u64>,
    frames: VecDeque<FrameSlot>,
    markers: VecDeque<u64>,
    visual_tokens: usize,
    long_tokens: usize,
    next_position: u64,
    clock: f64,
    log: Option<Vec<CacheEvent>>,
}

impl InterleavedCache {
    /// `n_l = usize::MAX` disables the long-term exit.
    pub fn new(n_s: usize, n_l: usize) -> Self {
        Self {
            n_s,
            n_l,
            tokens: BTreeMap::new(),
            by_id: HashMap::new(),
            frames: VecDeque::new(),
            markers: VecDeque::new(),
            visual_tokens: 0,
            long_tokens: 0,
            next_position: 0,
            clock: 0.0,
            log: None,
        }
    }

    /// Same as [`InterleavedCache::new`] but records every call in an event log.
    pub fn with_event_log(n_s: usize, n_l: usize) -> Self {
        let mut cache = Self::new(n_s, n_l);
        cache.log = Some(Vec::new());
        cache
    }

    pub fn short_capacity(&self) -> usize {
        self.n_s
    }

    pub fn long_capacity(&self) -> usize {
        self.n_l
    }

    /// Sets the timestamp attached to subsequent log events.
    pub fn set_clock(&mut self, t: f64) {
        self.clock = t;
    }

    /// Position the next entered token will receive.
    pub fn next_position(&self) -> u64 {
        self.next_position
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.by_id.contains_key(&id)
    }

    /// Number of live `VisualFrame` tokens.
    pub fn visual_tokens(&self) -> usize {
        self.visual_tokens
    }

    /// Number of live frames; this is what `N_S` bounds.
    pub fn visual_frames(&self) -> usize {
        self.frames.len()
    }

    /// Number of live `<L>` markers, i.e. verbalized steps; bounded by `N_L`.
    pub fn long_entries(&self) -> usize {
        self.markers.len()
    }

    /// Markers plus text tokens.
    pub fn long_tokens(&self) -> usize {
        self.long_tokens
    }

    pub fn events(&self) -> &[CacheEvent] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn take_events(&mut self) -> Vec<CacheEvent> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Appends `token` at the tail and stamps its entry position.
    pub fn entry(&mut self, mut token: Token) -> Result<u64, CacheError> {
        token.check()?;
        if self.by_id.contains_key(&token.id) {
            return Err(CacheError::DuplicateId(token.id));
        }
        if token.entry_position.is_some() {
            return Err(CacheError::AlreadyPositioned(token.id));
        }
        let pos = self.next_position;
        self.next_position += 1;
        token.entry_position = Some(pos);

        match token.kind {
            TokenKind::VisualFrame => {
                self.visual_tokens += 1;
                let frame = token.frame_index.expect("checked above");
                match self.frames.iter_mut().rev().find(|s| s.frame_index == frame) {
                    Some(slot) => slot.positions.push(pos),
                    None => self.frames.push_back(FrameSlot {
                        frame_index: frame,
                        positions: vec![pos],
                    }),
                }
            }
            TokenKind::LongTermMarker => {
                self.long_tokens += 1;
                self.markers.push_back(pos);
            }
            TokenKind::Text => self.long_tokens += 1,
            TokenKind::Prompt => {}
        }

        self.record(CacheOp::Entry, vec![token.id], token.kind.as_str());
        self.by_id.insert(token.id, pos);
        self.tokens.insert(pos, token);
        Ok(pos)
    }

    /// Evicts whole frames, oldest first, until at most `N_S` remain.
    pub fn exit_short(&mut self) -> Vec<Token> {
        let mut evicted = Vec::new();
        while self.frames.len() > self.n_s {
            let slot = self.frames.pop_front().expect("len > n_s ≥ 0");
            for pos in slot.positions {
                let token = self.remove_at(pos);
                self.visual_tokens -= 1;
                evicted.push(token);
            }
        }
        let ids = evicted.iter().map(|t| t.id).collect();
        self.record(CacheOp::ExitShort, ids, TokenKind::VisualFrame.as_str());
        evicted
    }

    /// Evicts step groups, oldest first, until at most `N_L` remain.
    ///
    /// On error nothing is evicted.
    pub fn exit_long(&mut self) -> Result<Vec<Vec<Token>>, CacheError> {
        let excess = self.markers.len().saturating_sub(self.n_l);
        let mut plan = Vec::with_capacity(excess);
        for &marker_pos in self.markers.iter().take(excess) {
            plan.push(self.group_positions(marker_pos)?);
        }

        let mut groups = Vec::with_capacity(plan.len());
        for positions in plan {
            self.markers.pop_front();
            let group: Vec<Token> = positions.into_iter().map(|p| self.remove_at(p)).collect();
            self.long_tokens -= group.len();
            groups.push(group);
        }
        let ids = groups.iter().flatten().map(|t| t.id).collect();
        self.record(CacheOp::ExitLong, ids, "long_term");
        Ok(groups)
    }

    /// Live tokens in entry order.
    pub fn live_tokens(&self) -> impl Iterator<Item = &Token> + '_ {
        self.tokens.values()
    }

    pub fn snapshot(&self) -> CacheSnapshot {
        CacheSnapshot {
            tokens: self
                .tokens
                .values()
                .map(|t| TokenMeta {
                    id: t.id,
                    kind: t.kind,
                    position: t.entry_position.expect("live tokens are positioned"),
                    frame_index: t.frame_index,
                    step_id: t.step_id,
                })
                .collect(),
            visual_frames: self.visual_frames(),
            long_entries: self.long_entries(),
        }
    }

    fn group_positions(&self, marker_pos: u64) -> Result<Vec<u64>, CacheError> {
        let marker = &self.tokens[&marker_pos];
        let step = marker.step_id.expect("markers carry a step id");
        let mut positions = vec![marker_pos];
        positions.extend(
            self.tokens
                .range(marker_pos + 1..)
                .take_while(|(_, t)| t.kind == TokenKind::Text && t.step_id == Some(step))
                .map(|(&p, _)| p),
        );
        if positions.len() == 1 {
            return Err(CacheError::OrphanMarker {
                marker: marker.id,
                step_id: step,
            });
        }
        Ok(positions)
    }

    fn remove_at(&mut self, pos: u64) -> Token {
        let token = self.tokens.remove(&pos).expect("indexed position is live");
        self.by_id.remove(&token.id);
        token
    }

    fn record(&mut self, op: CacheOp, token_ids: Vec<TokenId>, kind: &str) {
        if let Some(log) = self.log.as_mut() {
            log.push(CacheEvent {
                t: self.clock,
                op,
                token_ids,
                kind: kind.to_string(),
            });
        }
    }
}

/// Writes events as one JSON object per line.
pub fn write_events_jsonl<W: std::io::Write>(
    mut out: W,
    events: &[CacheEvent],
) -> std::io::Result<()> {
    for event in events {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
