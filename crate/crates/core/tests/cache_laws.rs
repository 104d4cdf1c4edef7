mod common;

use mmcache::cache::{write_events_jsonl, CacheEvent, CacheOp, InterleavedCache};
use mmcache::config::SimConfig;
use mmcache::types::{Token, TokenId, TokenKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{check_cache_trace, random_ops, NaiveCache, NaiveToken, TraceOp};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn random_traces_follow_the_list_reference(seed: u64, len in 1usize..300, n_s in 1usize..10, n_l in 1usize..8) {
        let ops = random_ops(&mut ChaCha8Rng::seed_from_u64(seed), len);
        prop_assert_eq!(check_cache_trace(&ops, n_s, n_l), Ok(()));
    }

    #[test]
    fn events_round_trip_through_jsonl(ids in prop::collection::vec(any::<u64>(), 0..8), t in 0.0f64..1e6) {
        let event = CacheEvent { t, op: CacheOp::ExitLong, token_ids: ids.into_iter().map(TokenId).collect(), kind: "long_term".into() };
        let mut buf = Vec::new();
        write_events_jsonl(&mut buf, std::slice::from_ref(&event)).unwrap();
        let line = String::from_utf8(buf).unwrap();
        prop_assert!(line.ends_with('\n'));
        let back: CacheEvent = serde_json::from_str(line.trim_end()).unwrap();
        prop_assert_eq!(back, event);
    }

    #[test]
    fn config_round_trips(n_s in 1usize..512, tau in 0usize..32, seed: u64, fps in 0.5f64..30.0) {
        let cfg = SimConfig { n_s, tau, seed, fps, ..SimConfig::default() };
        let text = serde_json::to_string(&cfg).unwrap();
        prop_assert_eq!(SimConfig::from_json_str(&text).unwrap(), cfg);
    }
}

#[test]
fn empty_and_small_snapshots() {
    let mut cache = InterleavedCache::new(2, 1);
    assert!(cache.snapshot().tokens.is_empty());
    for i in 0..3 {
        cache.entry(Token::visual(TokenId(i), i, vec![0.0])).unwrap();
    }
    assert_eq!(cache.snapshot().ids(), vec![TokenId(0), TokenId(1), TokenId(2)]);
    let gone = cache.exit_short();
    assert_eq!(gone.len(), 1);
    assert_eq!(cache.snapshot().ids(), vec![TokenId(1), TokenId(2)]);
}

#[test]
fn one_call_clears_a_backlog() {
    let ops: Vec<TraceOp> = (0..6).map(|_| TraceOp::Frame(2)).chain([TraceOp::ExitShort]).collect();
    assert_eq!(check_cache_trace(&ops, 2, 1), Ok(()));

    let mut naive = NaiveCache::new(2, 1);
    for f in 0..6 {
        for k in 0..2 {
            naive.entry(NaiveToken { id: f * 2 + k, kind: TokenKind::VisualFrame, frame: Some(f), step: None });
        }
    }
    assert_eq!(naive.exit_short(), (0..8).collect::<Vec<_>>());
}

#[test]
fn long_exit_takes_marker_and_its_text() {
    let ops = vec![
        TraceOp::Group { step: 1, texts: 3 },
        TraceOp::Frame(1),
        TraceOp::Group { step: 2, texts: 2 },
        TraceOp::Group { step: 1, texts: 1 },
        TraceOp::ExitLong,
    ];
    assert_eq!(check_cache_trace(&ops, 4, 1), Ok(()));
}
