mod common;

use mmcache::attention::{append_flops, AttentionEngine, EngineConfig};
use mmcache::config::SimConfig;
use mmcache::harness::{
    generate_stream, read_trace_csv, run_strategy, write_trace_csv, OraclePredictor, StrategyKind,
};
use mmcache::types::TokenId;
use mmcache::verbalizer::{group_consecutive, StepCatalog};

use common::{affine_fit, engine_trace, normalize_events, transcribe_loop, LoopShape};

fn small() -> SimConfig {
    SimConfig {
        d: 16,
        n_s: 16,
        mean_step_s: 6.0,
        step_s_jitter: 1.5,
        ..SimConfig::default()
    }
}

#[test]
fn hour_has_about_112_steps() {
    let stream = generate_stream(&SimConfig::default(), 3600.0).unwrap();
    let n = stream.steps.len() as f64;
    assert!((n - 112.5).abs() <= 0.2 * 112.5, "{n} steps");
    assert_eq!(generate_stream(&SimConfig::default(), 5.0).unwrap().steps.len(), 1);
}

#[test]
fn predictor_noise_sets_accuracy() {
    let mut p = OraclePredictor::new(0.1, 20, 9);
    let hits = (0..10_000u32).filter(|i| p.predict_id(i % 20) == i % 20).count() as f64;
    assert!((hits / 1e4 - 0.9).abs() <= 0.01 + 0.1 / 20.0);

    let mut p = OraclePredictor::new(1.0, 20, 9);
    let hits = (0..10_000u32).filter(|i| p.predict_id(i % 20) == i % 20).count() as f64;
    assert!((hits / 1e4 - 0.05).abs() < 0.01);
}

#[test]
fn runs_repeat_exactly() {
    let cfg = SimConfig { predictor_noise: 0.15, ..small() };
    let stream = generate_stream(&cfg, 90.0).unwrap();
    assert_eq!(stream, generate_stream(&cfg, 90.0).unwrap());
    for kind in StrategyKind::ALL {
        let a = run_strategy(kind, &stream, &cfg).unwrap();
        let b = run_strategy(kind, &stream, &cfg).unwrap();
        let strip = |t: &mmcache::harness::StrategyTrace| {
            t.rows.iter().map(|r| (r.live_tokens, r.total_flops(), r.pred)).collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.events, b.events);
    }
}

#[test]
fn committed_text_matches_step_runs() {
    // With a perfect predictor and τ = 1 every new run of a step is committed once.
    let cfg = SimConfig { tau: 1, ..small() };
    let stream = generate_stream(&cfg, 300.0).unwrap();
    let trace = run_strategy(StrategyKind::Interleaved, &stream, &cfg).unwrap();
    let catalog = StepCatalog::from_config(&cfg);
    let preds: Vec<(u64, u32)> = trace.rows.iter().map(|r| (r.frame, r.pred)).collect();
    let runs = group_consecutive(&preds, cfg.fps, &catalog).unwrap();
    let expected: u64 = runs.iter().map(|r| r.text_token_count as u64).sum();
    assert_eq!(trace.verbalized_text_tokens(), expected);
    assert_eq!(trace.verbalizations(), runs.len());
    assert_eq!(runs.len(), stream.steps.len());
}

#[test]
fn interleaved_cost_is_affine_in_live_tokens() {
    let cfg = SimConfig { n_s: 200, n_l: None, ..small() };
    let stream = generate_stream(&cfg, 120.0).unwrap();
    let trace = run_strategy(StrategyKind::Interleaved, &stream, &cfg).unwrap();
    assert!(trace.rows.iter().all(|r| r.recompute_flops == 0));

    let engine_cfg = EngineConfig { d: 32, heads: 4, layers: 2, vocab_size: 128, seed: 1 };
    let mut engine = AttentionEngine::init(engine_cfg).unwrap();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for n in 1..=200u64 {
        let f0 = engine.flops_snapshot();
        engine.append(TokenId(n), &[0.5; 32], n).unwrap();
        xs.push(n as f64);
        ys.push((engine.flops_snapshot() - f0) as f64);
    }
    let (slope, _, r2) = affine_fit(&xs, &ys);
    assert!(r2 > 0.999999);
    assert_eq!(slope.round() as usize, 2 * engine_cfg.layers * engine_cfg.d);
    assert_eq!(append_flops(&engine_cfg, 1).total(), ys[0] as u64);
}

#[test]
fn incremental_engine_matches_recompute() {
    let cfg = EngineConfig { d: 8, heads: 2, layers: 2, vocab_size: 16, seed: 5 };
    for seed in 0..40 {
        engine_trace(cfg, seed, 64).unwrap();
    }
}

#[test]
fn event_log_replays_the_loop() {
    for (tau, noise) in [(0, 0.0), (3, 0.3), (8, 0.1)] {
        let cfg = SimConfig { tau, predictor_noise: noise, n_s: 6, n_l: Some(3), tokens_per_frame: 2, ..small() };
        let stream = generate_stream(&cfg, 60.0).unwrap();
        let trace = run_strategy(StrategyKind::Interleaved, &stream, &cfg).unwrap();
        let catalog = StepCatalog::from_config(&cfg);
        let preds: Vec<u32> = trace.rows.iter().map(|r| r.pred).collect();
        let shape = LoopShape {
            prompt_tokens: cfg.prompt_tokens,
            tokens_per_frame: cfg.tokens_per_frame,
            n_s: cfg.n_s,
            n_l: cfg.long_capacity(),
            tau: cfg.tau,
        };
        let want = transcribe_loop(shape, &preds, |s| catalog.token_count(s).unwrap() as usize);
        assert_eq!(normalize_events(&trace.events), want);
    }
}

#[test]
fn trace_csv_round_trip() {
    let cfg = small();
    let stream = generate_stream(&cfg, 30.0).unwrap();
    let trace = run_strategy(StrategyKind::VerbalizedSeparate, &stream, &cfg).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, &trace).unwrap();
    let rows = read_trace_csv(buf.as_slice()).unwrap();
    assert_eq!(rows.len(), trace.rows.len());
    for (csv, row) in rows.iter().zip(&trace.rows) {
        assert_eq!(csv.live_tokens, row.live_tokens);
        assert_eq!(csv.recompute_flops, row.recompute_flops);
        assert_eq!(csv.strategy, StrategyKind::VerbalizedSeparate);
    }
    assert!(read_trace_csv("".as_bytes()).is_err());
}
