use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use serde::Serialize;

use mmcache::attention::{AttentionEngine, EngineConfig};
use mmcache::cache::write_events_jsonl;
use mmcache::config::{validate_config, SimConfig};
use mmcache::embedding::EmbeddingTable;
use mmcache::harness::growth::{fit_series, linear_fit, GrowthFit};
use mmcache::harness::{
    generate_stream, read_trace_csv, run_all, summarize, write_trace_csv, RunSummary, StrategyKind,
};
use mmcache::qformer::{grad_check, Connector, ConnectorConfig, GradCheckReport, Scene, SceneSpec};
use mmcache::types::TokenId;
use mmcache::verbalizer::{budget_report, TokenBudgetReport};

use crate::{BenchArgs, GradcheckArgs, ReportArgs, SimulateArgs};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub source: anyhow::Error,
}

fn fail<E: Into<anyhow::Error>>(code: u8) -> impl Fn(E) -> CliError {
    move |e| CliError {
        code,
        source: e.into(),
    }
}

fn usage<E: Into<anyhow::Error>>(e: E) -> CliError {
    fail(2)(e)
}

fn io<E: Into<anyhow::Error>>(e: E) -> CliError {
    fail(1)(e)
}

type CliResult = Result<(), CliError>;

fn load_config(path: Option<&Path>) -> Result<SimConfig, CliError> {
    let cfg = match path {
        Some(p) => SimConfig::load(p).map_err(usage)?,
        None => SimConfig::default(),
    };
    validate_config(cfg).map_err(usage)
}

fn unix_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display())).map_err(io)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(io)?;
    w.write_all(b"\n").map_err(io)?;
    w.flush().map_err(io)
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(io)?;
    println!("{text}");
    Ok(())
}

// ── simulate ────────────────────────────────────────────────────────

#[derive(Debug, Serialize)]
struct Artifacts {
    traces: Vec<String>,
    summary: String,
    events: Option<String>,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    config: SimConfig,
    seed: u64,
    duration_s: f64,
    strategies: Vec<StrategyKind>,
    artifacts: Artifacts,
    started_unix_s: u64,
    finished_unix_s: u64,
}

#[derive(Debug, Serialize)]
struct SimulationSummary {
    duration_s: f64,
    frames: usize,
    steps: usize,
    budget: TokenBudgetReport,
    strategies: Vec<RunSummary>,
}

fn parse_strategies(s: &str) -> Result<Vec<StrategyKind>, CliError> {
    if s == "all" {
        return Ok(StrategyKind::ALL.to_vec());
    }
    s.parse::<StrategyKind>()
        .map(|k| vec![k])
        .map_err(|e| usage(anyhow!(e)))
}

pub fn simulate(a: &SimulateArgs) -> CliResult {
    let started = unix_secs();
    let cfg = load_config(a.config.as_deref())?;
    let kinds = parse_strategies(&a.strategy)?;
    let stream = generate_stream(&cfg, a.duration_s).map_err(usage)?;
    let traces = run_all(&kinds, &stream, &cfg)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail(3))?;

    fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))
        .map_err(io)?;
    let path_str = |p: &PathBuf| p.display().to_string();

    let mut artifacts = Artifacts {
        traces: Vec::new(),
        summary: String::new(),
        events: None,
    };
    let mut summaries = Vec::new();
    for trace in &traces {
        let path = a.out_dir.join(format!("trace_{}.csv", trace.kind.short()));
        let file = File::create(&path).with_context(|| format!("creating {}", path.display())).map_err(io)?;
        write_trace_csv(BufWriter::new(file), trace).map_err(io)?;
        artifacts.traces.push(path_str(&path));
        if trace.kind == StrategyKind::Interleaved {
            let path = a.out_dir.join("events_b.jsonl");
            let file = File::create(&path).map_err(io)?;
            let mut w = BufWriter::new(file);
            write_events_jsonl(&mut w, &trace.events).map_err(io)?;
            w.flush().map_err(io)?;
            artifacts.events = Some(path_str(&path));
        }
        if !trace.rows.is_empty() {
            summaries.push(summarize(trace).map_err(fail(3))?);
        }
    }

    let summary_path = a.out_dir.join("summary.json");
    write_json(
        &summary_path,
        &SimulationSummary {
            duration_s: a.duration_s,
            frames: stream.frames.len(),
            steps: stream.steps.len(),
            budget: budget_report(&cfg, a.duration_s).map_err(usage)?,
            strategies: summaries,
        },
    )?;
    artifacts.summary = path_str(&summary_path);

    write_json(
        &a.out_dir.join("manifest.json"),
        &RunManifest {
            tool: "mmcache",
            version: env!("CARGO_PKG_VERSION"),
            config: cfg.clone(),
            seed: cfg.seed,
            duration_s: a.duration_s,
            strategies: kinds,
            artifacts,
            started_unix_s: started,
            finished_unix_s: unix_secs(),
        },
    )?;

    let truncated: Vec<String> = traces
        .iter()
        .filter_map(|t| t.truncated_at.map(|f| format!("{} at frame {f}", t.kind)))
        .collect();
    if !truncated.is_empty() {
        return Err(fail(3)(anyhow!(
            "live-token cap of {} reached: {}",
            cfg.max_live_tokens,
            truncated.join(", ")
        )));
    }
    eprintln!("wrote {} trace(s) to {}", traces.len(), a.out_dir.display());
    Ok(())
}

// ── bench ───────────────────────────────────────────────────────────

#[derive(Debug, Serialize)]
struct BenchPoint {
    live_tokens: usize,
    append_flops: u64,
}

#[derive(Debug, Serialize)]
struct AffineFit {
    slope: f64,
    intercept: f64,
    r2: f64,
}

#[derive(Debug, Serialize)]
struct BenchReport {
    points: Vec<BenchPoint>,
    fit: Option<AffineFit>,
    note: Option<String>,
}

fn parse_sweep(s: &str) -> Result<Vec<usize>, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let [from, to, step] = parts.as_slice() else {
        return Err(usage(anyhow!("sweep must look like from:to:step, got `{s}`")));
    };
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| usage(anyhow!("sweep value `{t}`: {e}")));
    let (from, to, step) = (num(from)?, num(to)?, num(step)?);
    if from == 0 || step == 0 {
        return Err(usage(anyhow!("sweep start and step must be ≥ 1")));
    }
    if from > to {
        return Err(usage(anyhow!("sweep range is reversed ({from} > {to})")));
    }
    Ok((from..=to).step_by(step).collect())
}

pub fn bench(a: &BenchArgs) -> CliResult {
    let cfg = load_config(a.config.as_deref())?;
    let sizes = parse_sweep(&a.sweep)?;
    let mut engine = AttentionEngine::init(EngineConfig {
        d: cfg.d,
        heads: cfg.n_heads,
        layers: cfg.n_layers,
        vocab_size: cfg.vocab_size,
        seed: cfg.seed,
    })
    .map_err(usage)?
    .record_attention(false);
    let table = EmbeddingTable::new(cfg.seed, cfg.d);
    let mut next = 0u64;
    let mut append = |engine: &mut AttentionEngine| -> Result<u64, CliError> {
        let before = engine.flops_snapshot();
        engine
            .append(TokenId(next), &table.vocab((next % 997) as u32), next)
            .map_err(fail(3))?;
        next += 1;
        Ok(engine.flops_snapshot() - before)
    };

    let mut points = Vec::with_capacity(sizes.len());
    for &n in &sizes {
        while engine.len() + 1 < n {
            append(&mut engine)?;
        }
        let flops = append(&mut engine)?;
        points.push(BenchPoint {
            live_tokens: engine.len(),
            append_flops: flops,
        });
    }

    if let Some(path) = &a.out {
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(w, "live_tokens,append_flops").map_err(io)?;
        for p in &points {
            writeln!(w, "{},{}", p.live_tokens, p.append_flops).map_err(io)?;
        }
        w.flush().map_err(io)?;
    }

    let report = if points.len() < 2 {
        BenchReport {
            points,
            fit: None,
            note: Some("a fit needs at least two sweep points".into()),
        }
    } else {
        let xs: Vec<f64> = points.iter().map(|p| p.live_tokens as f64).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.append_flops as f64).collect();
        let (slope, intercept, r2) = linear_fit(&xs, &ys);
        BenchReport {
            points,
            fit: Some(AffineFit { slope, intercept, r2 }),
            note: None,
        }
    };
    print_json(&report)
}

// ── gradcheck ───────────────────────────────────────────────────────

#[derive(Debug, Serialize)]
struct GradcheckOutput {
    #[serde(flatten)]
    report: GradCheckReport,
    eps: f64,
    tolerance: f64,
    parameters: usize,
    pass: bool,
}

pub fn mini_scene(seed: u64) -> Scene {
    Scene::synthetic(
        seed,
        SceneSpec {
            side: 4,
            patch_dim: 8,
            caption_len: 5,
            vocab_size: 16,
            ..SceneSpec::default()
        },
    )
}

pub fn gradcheck(a: &GradcheckArgs) -> CliResult {
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(usage(anyhow!("--eps must be > 0 (got {})", a.eps)));
    }
    let scene = match &a.scene {
        Some(path) => Scene::load(path).map_err(usage)?,
        None => mini_scene(a.seed),
    };
    let vocab = scene.caption.iter().map(|&t| t as usize + 1).max().unwrap_or(0).max(16);
    let conn = Connector::init(ConnectorConfig {
        patch_dim: scene.grid.dim(),
        grid_side: scene.grid.side(),
        d: 8,
        hidden: 8,
        m: 4,
        k: scene.objects.len().max(2),
        vocab_size: vocab,
        seed: a.seed,
    })
    .map_err(usage)?;
    let (_, analytic) = conn.loss_and_grad(&conn.params, &scene, a.lambda_1).map_err(usage)?;
    let coords: Vec<usize> = (0..analytic.len()).collect();
    let loss = |p: &[f64]| conn.loss(p, &scene, a.lambda_1).map_or(f64::NAN, |l| l.total);
    let report = grad_check(&conn.params, &analytic, loss, a.eps, &coords).map_err(fail(4))?;
    let pass = report.max_rel_error <= GRADCHECK_TOLERANCE;
    print_json(&GradcheckOutput {
        report,
        eps: a.eps,
        tolerance: GRADCHECK_TOLERANCE,
        parameters: analytic.len(),
        pass,
    })?;
    if !pass {
        return Err(fail(4)(anyhow!(
            "max relative error {:.3e} exceeds {GRADCHECK_TOLERANCE:e}",
            report.max_rel_error
        )));
    }
    Ok(())
}

// ── report ──────────────────────────────────────────────────────────

#[derive(Debug, Serialize)]
struct ScalingReport {
    strategy: StrategyKind,
    frames: usize,
    #[serde(flatten)]
    fit: GrowthFit,
}

pub fn report(a: &ReportArgs) -> CliResult {
    if let Some(path) = &a.scaling {
        let file = File::open(path).with_context(|| format!("opening {}", path.display())).map_err(usage)?;
        let rows = read_trace_csv(file).map_err(usage)?;
        let series: Vec<f64> = rows.iter().map(|r| r.live_tokens as f64).collect();
        let fit = fit_series(&series).map_err(usage)?;
        return print_json(&ScalingReport {
            strategy: rows[0].strategy,
            frames: rows.len(),
            fit,
        });
    }
    let cfg = load_config(a.config.as_deref())?;
    print_json(&budget_report(&cfg, a.horizon_s).map_err(usage)?)
}
