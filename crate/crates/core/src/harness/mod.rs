//! Synthetic procedural streams and the three caching strategies run over
//! them, with per-frame cost traces.

pub mod growth;
pub mod predictor;
pub mod strategy;
pub mod stream;
pub mod trace;

use thiserror::Error;

use crate::attention::EngineError;
use crate::cache::CacheError;
use crate::config::ConfigError;
use crate::verbalizer::VerbalizeError;

pub use growth::{fit_growth, spike_ratio, GrowthClass, GrowthFit};
pub use predictor::OraclePredictor;
pub use strategy::{run_all, run_strategy, StrategyKind, StrategyTrace, TraceRow};
pub use stream::{generate_stream, generate_stream_with, temporal_variance, Frame, SyntheticStream};
pub use trace::{read_trace_csv, summarize, write_trace_csv, CsvRow, RunSummary};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Verbalize(#[from] VerbalizeError),
    #[error("duration must be > 0 (got {0})")]
    NonPositiveDuration(f64),
    #[error("growth fit needs at least {needed} frames, trace has {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("class {0} has fewer than two frames")]
    SingletonClass(u32),
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace CSV: {0}")]
    Csv(#[from] csv::Error),
}
