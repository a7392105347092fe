mod common;

use hat_core::infer::{
    boundary_divergence, check_equivalence, generate, schedule, Batch, GenConfig, GenSession, Policy, Sampling,
    Status,
};
use hat_core::model::{forward, init_params, HatConfig, ParamSet};
use hat_core::splitter::Splitter;
use hat_core::Error;

fn micro32() -> ParamSet<f32> {
    init_params(&HatConfig::micro(), 11)
}

#[test]
fn prefill_matches_full_forward() {
    let p = micro32();
    for prompt in ["", "a", "Hello, world! FooBar", "x y z 1.5 can't"] {
        let mut s = GenSession::new(0, &p, GenConfig::greedy(8)).unwrap();
        s.prefill(&p, prompt.as_bytes()).unwrap();
        let full = forward(&p, prompt.as_bytes()).unwrap();
        let last = full.logits.row(full.logits.rows() - 1);
        let inc = s.logits().unwrap();
        let diff = inc.iter().zip(last).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(diff <= 1e-4, "{prompt:?}: {diff}");
        assert_eq!(s.backbone_positions(), full.spans.len());
    }
}

#[test]
fn empty_prompt_is_bos_only() {
    let p = micro32();
    let mut s = GenSession::new(0, &p, GenConfig::greedy(4)).unwrap();
    s.prefill(&p, b"").unwrap();
    assert_eq!(s.model_bytes(), [0xFE]);
    let r = s.cache_report();
    assert_eq!((r.byte_rows, r.word_rows), (1, 1));
}

#[test]
fn prefill_is_deterministic_and_validates() {
    let p = micro32();
    let run = || {
        let mut s = GenSession::new(0, &p, GenConfig::greedy(4)).unwrap();
        s.prefill(&p, b"same prompt").unwrap();
        (s.logits().unwrap().to_vec(), s.logits_digest(), s.cache_report())
    };
    assert_eq!(run(), run());
    let mut s = GenSession::<f32>::new(0, &p, GenConfig::greedy(4)).unwrap();
    assert!(matches!(s.prefill(&p, &[0xC3]), Err(Error::MalformedInput { .. })));
    assert_eq!(s.status(), Status::Finished);
    let long = vec![b'a'; p.config.max_byte_positions];
    let mut s = GenSession::<f32>::new(0, &p, GenConfig::greedy(4)).unwrap();
    assert!(matches!(s.prefill(&p, &long), Err(Error::TooLong { .. })));
}

#[test]
fn incremental_equals_full_recompute() {
    let p = micro32();
    let mut rng = common::rng(5);
    for i in 0..6 {
        let prompt = if i % 2 == 0 {
            common::random_ascii(&mut rng, 24)
        } else {
            common::random_mixed(&mut rng, 10)
        };
        let r = check_equivalence(&p, prompt.as_bytes(), 48).unwrap();
        assert_eq!(r.byte_mismatches, 0, "{prompt:?}");
        assert!(r.max_abs_diff <= 1e-4, "{prompt:?}: {}", r.max_abs_diff);
    }
    let p64: ParamSet<f64> = init_params(&HatConfig::micro(), 11);
    let r = check_equivalence(&p64, b"double precision", 40).unwrap();
    assert!(r.max_abs_diff <= 1e-8);
}

#[test]
fn generated_text_is_valid_utf8_within_budget() {
    let p = micro32();
    for seed in 0..4 {
        let gen = GenConfig {
            sampling: Sampling::Temperature {
                temperature: 1.5,
                seed,
            },
            max_new_bytes: 40,
        };
        let s = generate(&p, b"abc ", gen).unwrap();
        assert!(s.generated().len() <= 40);
        assert!(std::str::from_utf8(s.generated()).is_ok());
        assert!(!s.generated().contains(&0xFE) && !s.generated().contains(&0xFF));
    }
}

#[test]
fn word_cache_grows_once_per_closed_word_and_byte_cache_is_capped() {
    let p = micro32();
    let w = p.config.encoder.window.unwrap();
    let mut s = GenSession::new(0, &p, GenConfig::greedy(3 * w)).unwrap();
    s.prefill(&p, b"Foo").unwrap();
    let mut words = s.cache_report().word_rows;
    while !s.is_finished() {
        let before = s.cache_report();
        let out = s.step_byte(&p).unwrap();
        let after = s.cache_report();
        if out.byte == 0xFF {
            break;
        }
        assert_eq!(after.word_rows, before.word_rows + out.closed.len());
        assert!(after.byte_rows <= w);
        words += out.closed.len();
        assert_eq!(after.word_rows, words);
    }
    assert!(s.cache_report().byte_rows <= w);
    assert!(matches!(s.step_byte(&p), Err(Error::Finished)));
}

#[test]
fn byte_rows_before_window_fills() {
    let p = micro32();
    let mut s = GenSession::new(0, &p, GenConfig::greedy(5)).unwrap();
    s.prefill(&p, b"ab").unwrap();
    assert_eq!(s.cache_report().byte_rows, 3);
    let mut g = 0;
    while !s.is_finished() {
        if s.step_byte(&p).unwrap().byte != 0xFF {
            g += 1;
        }
    }
    assert_eq!(s.cache_report().byte_rows, 3 + g);
}

fn prompts(n: usize) -> Vec<String> {
    let mut rng = common::rng(77);
    (0..n).map(|_| common::random_ascii(&mut rng, 20)).collect()
}

fn sampled(seed: u64, max: usize) -> GenConfig {
    GenConfig {
        sampling: Sampling::Temperature {
            temperature: 1.0,
            seed,
        },
        max_new_bytes: max,
    }
}

#[test]
fn batch_matches_unbatched_and_accounts_backbone_positions() {
    let p = micro32();
    let ps = prompts(12);
    let solo: Vec<_> = ps
        .iter()
        .enumerate()
        .map(|(i, q)| generate(&p, q.as_bytes(), sampled(i as u64, 30)).unwrap())
        .collect();
    for policy in [Policy::BoundarySync, Policy::FixedByteStride(1), Policy::FixedByteStride(4)] {
        let mut b = Batch::new(&p, policy).unwrap();
        for (i, q) in ps.iter().enumerate() {
            b.submit(q.as_bytes(), sampled(i as u64, 30)).unwrap();
        }
        b.run().unwrap();
        let stats = b.stats();
        let mut expected = 0;
        for (s, t) in b.sessions().iter().zip(&solo) {
            assert_eq!(s.generated(), t.generated(), "{policy:?}");
            assert_eq!(s.logits_digest(), t.logits_digest(), "{policy:?}");
            let text = &s.model_bytes()[1..];
            let mut inc = Splitter::new(p.config.max_word_bytes).unwrap().incremental();
            let closed = inc.push_bytes(text).unwrap().len();
            expected += closed + 1;
        }
        assert_eq!(stats.backbone_positions as usize, expected, "{policy:?}");
        assert_eq!(stats.ticks as usize, b.trace().len());
    }
}

#[test]
fn boundary_sync_waits_for_mid_word_sessions() {
    let p = micro32();
    let mut b = Batch::new(&p, Policy::BoundarySync).unwrap();
    b.submit(b"one", GenConfig::greedy(20)).unwrap();
    b.submit(b"two", GenConfig::greedy(20)).unwrap();
    let plan = b.tick().unwrap();
    assert_eq!(plan.prefill, [0, 1]);
    assert!(b.trace()[0].starts_with("1\t0:P 1:P"));
    loop {
        let states: Vec<Status> = b.sessions().iter().map(|s| s.status()).collect();
        let plan = schedule(b.sessions(), Policy::BoundarySync);
        if states.contains(&Status::MidWord) {
            assert!(plan.word.is_empty());
        }
        for i in &plan.byte {
            assert!(!plan.word.contains(i));
        }
        if b.tick().unwrap().is_empty() {
            break;
        }
    }
    assert!(b.is_done());
}

#[test]
fn foobar_advances_backbone_when_foo_closes() {
    let p = micro32();
    let mut s = GenSession::new(0, &p, GenConfig::greedy(1)).unwrap();
    s.prefill(&p, b"Foo").unwrap();
    assert_eq!(s.backbone_positions(), 1);
    let mut t = GenSession::new(0, &p, GenConfig::greedy(1)).unwrap();
    t.prefill(&p, b"FooB").unwrap();
    assert_eq!(t.backbone_positions(), 2);
    assert_eq!(t.closed_words()[0].end, 4);
}

#[test]
fn backbone_work_shrinks_by_mean_word_length() {
    let p = micro32();
    let mut b = Batch::new(&p, Policy::BoundarySync).unwrap();
    for (i, q) in prompts(8).iter().enumerate() {
        b.submit(q.as_bytes(), sampled(100 + i as u64, 60)).unwrap();
    }
    b.run().unwrap();
    let st = b.stats();
    // Per-byte consultation would cost one backbone position per generated
    // byte; word-level consultation costs one per closed word.
    let mut gen_bytes = 0;
    let mut gen_words = 0;
    let mut word_bytes = 0;
    for s in b.sessions() {
        let prompt_words = hat_core::infer::incremental_assignment(&Splitter::new(32).unwrap(), s.prompt())
            .unwrap()
            .0
            .len();
        gen_bytes += s.generated().len();
        gen_words += s.backbone_positions() - prompt_words - 1;
        word_bytes += s.closed_words()[prompt_words..].iter().map(|w| w.len()).sum::<usize>();
    }
    assert!(gen_words > 0 && gen_words < gen_bytes);
    let ratio = gen_bytes as f64 / gen_words as f64;
    let mean_len = word_bytes as f64 / gen_words as f64;
    assert!((ratio - mean_len).abs() / mean_len < 0.5, "{ratio} vs {mean_len}");
    assert!(st.backbone_calls < st.encoder_calls);
}

#[test]
fn divergence_report_on_corpus() {
    let sp = Splitter::default();
    let ascii = boundary_divergence(&sp, include_bytes!("../data/overfit_1k.txt")).unwrap();
    assert_eq!(ascii.diverged(), 0);
    let mixed = boundary_divergence(&sp, "Grüße aus München, 東京 and École".as_bytes()).unwrap();
    assert!(mixed.fraction() > 0.0 && mixed.fraction() < 0.5);
}

#[test]
fn stride_policy_validates() {
    let p = micro32();
    assert!(Batch::new(&p, Policy::FixedByteStride(0)).is_err());
}
