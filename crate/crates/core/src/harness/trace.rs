//! Trace CSV files and per-run summaries.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::growth::{fit_growth, spike_ratio, GrowthFit, MIN_FRAMES};
use super::strategy::{StrategyKind, StrategyTrace};
use super::HarnessError;

/// One CSV line. Wall-clock time is left out so files are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub frame: u64,
    pub t_s: f64,
    pub strategy: StrategyKind,
    pub live_tokens: usize,
    pub append_flops: u64,
    pub recompute_flops: u64,
    pub mem_bytes_proxy: u64,
    pub pred: u32,
    pub correct: bool,
    pub verbalized: bool,
}

pub fn csv_rows(trace: &StrategyTrace) -> Vec<CsvRow> {
    trace
        .rows
        .iter()
        .map(|r| CsvRow {
            frame: r.frame,
            t_s: r.t_s,
            strategy: trace.kind,
            live_tokens: r.live_tokens,
            append_flops: r.append_flops,
            recompute_flops: r.recompute_flops,
            mem_bytes_proxy: r.mem_bytes_proxy,
            pred: r.pred,
            correct: r.correct,
            verbalized: r.verbalized,
        })
        .collect()
}

pub fn write_trace_csv<W: Write>(out: W, trace: &StrategyTrace) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for row in csv_rows(trace) {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<CsvRow>, HarnessError> {
    let rows = csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<Vec<CsvRow>, _>>()?;
    if rows.is_empty() {
        return Err(HarnessError::EmptyTrace);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: StrategyKind,
    pub frames: usize,
    pub truncated_at: Option<u64>,
    /// Absent when the run is shorter than the fit minimum.
    pub growth: Option<GrowthFit>,
    pub spike_ratio: f64,
    pub accuracy: f64,
    pub verbalizations: usize,
    pub verbalized_text_tokens: u64,
    pub peak_live_tokens: usize,
    pub total_flops: u64,
}

pub fn summarize(trace: &StrategyTrace) -> Result<RunSummary, HarnessError> {
    let costs: Vec<u64> = trace.rows.iter().map(|r| r.total_flops()).collect();
    Ok(RunSummary {
        strategy: trace.kind,
        frames: trace.rows.len(),
        truncated_at: trace.truncated_at,
        growth: if trace.rows.len() >= MIN_FRAMES {
            Some(fit_growth(trace)?)
        } else {
            None
        },
        spike_ratio: spike_ratio(&costs)?,
        accuracy: trace.accuracy(),
        verbalizations: trace.verbalizations(),
        verbalized_text_tokens: trace.verbalized_text_tokens(),
        peak_live_tokens: trace.rows.iter().map(|r| r.live_tokens).max().unwrap_or(0),
        total_flops: costs.iter().sum(),
    })
}
