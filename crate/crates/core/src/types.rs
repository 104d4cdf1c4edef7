//! Domain vocabulary shared by every module: tokens, procedural steps and boxes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Unique, monotonically allocated token identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u64);

impl std::fmt::Display for TokenId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Hands out strictly increasing token ids.
#[derive(Debug, Clone, Default)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(first: u64) -> Self {
        Self { next: first }
    }

    pub fn next_id(&mut self) -> TokenId {
        let id = TokenId(self.next);
        self.next += 1;
        id
    }

    /// The id the next call to [`IdAllocator::next_id`] will return.
    pub fn peek(&self) -> TokenId {
        TokenId(self.next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    /// `<v>`: one token of an encoded video frame.
    VisualFrame,
    /// Verbalized step text.
    Text,
    /// `<L>`: opens a verbalized step group in the long-term span.
    LongTermMarker,
    /// Instruction text. Never evicted.
    Prompt,
}

impl TokenKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenKind::VisualFrame => "visual_frame",
            TokenKind::Text => "text",
            TokenKind::LongTermMarker => "long_term_marker",
            TokenKind::Prompt => "prompt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("visual frame token {0} has no frame index")]
    MissingFrameIndex(TokenId),
    #[error("{kind} token {id} has no step id")]
    MissingStepId { id: TokenId, kind: &'static str },
    #[error("token {0} already carries an entry position")]
    AlreadyPositioned(TokenId),
}

/// A single cache entry.
///
/// `entry_position` stays `None` until the token enters a cache; the cache
/// assigns it exactly once and it never changes afterwards, even when other
/// tokens are evicted around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub id: TokenId,
    pub kind: TokenKind,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_position: Option<u64>,
}

impl Token {
    pub fn visual(id: TokenId, frame_index: u64, embedding: Vec<f64>) -> Self {
        Self {
            id,
            kind: TokenKind::VisualFrame,
            embedding,
            frame_index: Some(frame_index),
            step_id: None,
            entry_position: None,
        }
    }

    pub fn text(id: TokenId, step_id: u32, embedding: Vec<f64>) -> Self {
        Self {
            id,
            kind: TokenKind::Text,
            embedding,
            frame_index: None,
            step_id: Some(step_id),
            entry_position: None,
        }
    }

    pub fn marker(id: TokenId, step_id: u32, embedding: Vec<f64>) -> Self {
        Self {
            id,
            kind: TokenKind::LongTermMarker,
            embedding,
            frame_index: None,
            step_id: Some(step_id),
            entry_position: None,
        }
    }

    pub fn prompt(id: TokenId, embedding: Vec<f64>) -> Self {
        Self {
            id,
            kind: TokenKind::Prompt,
            embedding,
            frame_index: None,
            step_id: None,
            entry_position: None,
        }
    }

    /// Checks the per-kind metadata invariants.
    pub fn check(&self) -> Result<(), TokenError> {
        match self.kind {
            TokenKind::VisualFrame if self.frame_index.is_none() => {
                Err(TokenError::MissingFrameIndex(self.id))
            }
            TokenKind::Text | TokenKind::LongTermMarker if self.step_id.is_none() => {
                Err(TokenError::MissingStepId {
                    id: self.id,
                    kind: self.kind.as_str(),
                })
            }
            _ => Ok(()),
        }
    }

    pub fn is_visual(&self) -> bool {
        self.kind == TokenKind::VisualFrame
    }

    pub fn is_marker(&self) -> bool {
        self.kind == TokenKind::LongTermMarker
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("step {step_id}: end_s ({end_s}) must exceed start_s ({start_s})")]
    EmptySpan { step_id: u32, start_s: f64, end_s: f64 },
    #[error("step {0}: text_token_count must be at least 1")]
    NoTextTokens(u32),
}

/// One procedural step: what the generator emits and the verbalizer consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_id: u32,
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
    pub text_token_count: u32,
}

impl StepRecord {
    pub fn new(
        step_id: u32,
        label: impl Into<String>,
        start_s: f64,
        end_s: f64,
        text_token_count: u32,
    ) -> Result<Self, StepError> {
        let step = Self {
            step_id,
            label: label.into(),
            start_s,
            end_s,
            text_token_count,
        };
        step.check()?;
        Ok(step)
    }

    pub fn check(&self) -> Result<(), StepError> {
        if !(self.end_s > self.start_s) {
            return Err(StepError::EmptySpan {
                step_id: self.step_id,
                start_s: self.start_s,
                end_s: self.end_s,
            });
        }
        if self.text_token_count == 0 {
            return Err(StepError::NoTextTokens(self.step_id));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum BoxError {
    #[error("degenerate box: w={w}, h={h} (both must be > 0)")]
    Degenerate { w: f64, h: f64 },
    #[error("non-finite box coordinate")]
    NonFinite,
}

/// Axis-aligned box in normalized center format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, BoxError> {
        let b = Self { cx, cy, w, h };
        b.check()?;
        Ok(b)
    }

    pub fn check(&self) -> Result<(), BoxError> {
        if ![self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite()) {
            return Err(BoxError::NonFinite);
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(BoxError::Degenerate { w: self.w, h: self.h });
        }
        Ok(())
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, BoxError> {
        Self::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    /// `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Intersects the box with the unit square. Returns `None` when nothing
    /// of it lies inside.
    pub fn clamp_unit(&self) -> Option<Self> {
        let [x1, y1, x2, y2] = self.corners();
        let (x1, y1) = (x1.clamp(0.0, 1.0), y1.clamp(0.0, 1.0));
        let (x2, y2) = (x2.clamp(0.0, 1.0), y2.clamp(0.0, 1.0));
        Self::from_corners(x1, y1, x2, y2).ok()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn l1(&self, other: &BBox) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}
