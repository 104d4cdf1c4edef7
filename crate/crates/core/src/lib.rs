//! Streaming token-cache engine and benchmark simulator.

pub mod attention;
pub mod cache;
pub mod config;
pub mod embedding;
pub mod harness;
pub mod qformer;
pub mod types;
pub mod verbalizer;
