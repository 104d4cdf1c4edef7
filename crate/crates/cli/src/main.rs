//! `mmcache` command-line driver.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration or usage error,
//! 3 run aborted at runtime (live-token cap), 4 verification failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "mmcache", version, about = "Streaming interleaved-cache simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic stream and run caching strategies over it.
    Simulate(SimulateArgs),
    /// Measure per-append FLOPs across live-cache sizes.
    Bench(BenchArgs),
    /// Verify connector gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Print a token-budget report or a growth classification.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON config file; defaults apply when omitted.
    pub config: Option<PathBuf>,
    /// all, a1 (progressive visual), a2 (verbalized separate) or b (interleaved).
    #[arg(long, default_value = "all")]
    pub strategy: String,
    #[arg(long, default_value_t = 1200.0)]
    pub duration_s: f64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub config: Option<PathBuf>,
    /// Live-token counts as `from:to:step`.
    #[arg(long, default_value = "8:512:8")]
    pub sweep: String,
    /// Also write the raw points as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["scene", "synthetic"]))]
pub struct GradcheckArgs {
    /// Scene JSON file.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Use a generated 4×4 scene.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 1e-5, allow_negative_numbers = true)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2.0)]
    pub lambda_1: f64,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("kind").required(true).args(["budget", "scaling"]))]
pub struct ReportArgs {
    /// Token budget for the configured stream parameters.
    #[arg(long)]
    pub budget: bool,
    /// Growth classification of a trace CSV.
    #[arg(long, value_name = "TRACE_CSV")]
    pub scaling: Option<PathBuf>,
    /// Config for `--budget`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 3600.0)]
    pub horizon_s: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.source);
            ExitCode::from(e.code)
        }
    }
}
