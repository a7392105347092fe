//! One PASS/FAIL line per acceptance criterion. Lines are written straight
//! to stdout so they show up without `--nocapture`.

mod common;

use std::io::Write;
use std::path::PathBuf;

use hat_core::infer::{check_equivalence, generate, incremental_assignment, Batch, GenConfig, Policy, Sampling};
use hat_core::metrics::compression_report;
use hat_core::model::{
    count_params, forward, init_params, load_checkpoint, save_checkpoint, token_embedding_params, HatConfig,
    ParamGroup, ParamSet,
};
use hat_core::splitter::{split, uax29_word_boundaries, SplitResult, Splitter, WordSpan};
use hat_core::train::{
    gradient_check, perturb_params, train_from, train_loop, Adam, AdamConfig, GroupPolicy, LrSchedule,
    TrainOptions,
};

const CORPUS: &[u8] = include_bytes!("../data/overfit_1k.txt");

fn report(name: &str, pass: bool, detail: &str) {
    let line = format!("\n{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{name}: {detail}");
}

fn manifest(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(rel)
}

/// Micro model after a few training steps, so greedy output is not a
/// single repeated byte.
fn warm_micro() -> ParamSet<f32> {
    let opts = TrainOptions {
        window: Some(256),
        ..TrainOptions::default()
    };
    train_loop(&HatConfig::micro(), CORPUS, &LrSchedule::toy(60), &GroupPolicy::default(), 60, 3, &opts)
        .unwrap()
        .params
}

#[test]
fn c01_table1_parameter_counts() {
    let c = count_params(&HatConfig::load(&manifest("configs/table1.cfg")).unwrap());
    let got = (c.encoder, c.backbone, c.decoder, c.total());
    let want = (119_291_904, 6_979_584_000, 93_619_200, 7_192_495_104);
    report("table1-param-counts", got == want, &format!("{got:?} want {want:?}"));
}

#[test]
fn c02_table2_parameter_counts() {
    let c2 = count_params(&HatConfig::load(&manifest("configs/table2.cfg")).unwrap());
    let c1 = count_params(&HatConfig::table1());
    let got = (c2.encoder, c2.backbone, c2.decoder, c2.total());
    let want = (476_610_560, 68_452_352_000, 373_884_928, 69_302_847_488);
    let per_layer = c1.backbone_per_layer;
    let emb = token_embedding_params(128_256, 4096);
    report(
        "table2-param-counts",
        got == want && per_layer == 218_112_000 && emb == 525_336_576,
        &format!("{got:?}; per-layer {per_layer}; llama embedding {emb}"),
    );
}

#[test]
fn c03_splitter_suite() {
    let sp = Splitter::default();
    let mut rng = common::rng(11);
    let mut lossless = 0;
    for _ in 0..10_000 {
        let s = common::random_mixed(&mut rng, 64);
        let r = sp.split(s.as_bytes()).unwrap();
        if r.chunks(s.as_bytes()).concat() == s.as_bytes() {
            lossless += 1;
        }
    }
    let chunks = |s: &'static str| -> Vec<&'static str> {
        split(s.as_bytes()).unwrap().spans.iter().map(|w| &s[w.range()]).collect()
    };
    let rules = [
        chunks("FooBar") == ["Foo", "Bar"],
        chunks("a+b") == ["a", "+", "b"],
        chunks("∀x∈S") == ["∀", "x", "∈", "S"],
        chunks("one  two") == ["one", "  two"],
        chunks("Hello, world!") == ["Hello,", " world!"],
        chunks("yes!!! no?") == ["yes!!!", " no?"],
    ];
    let golden = std::fs::read_to_string(manifest("tests/golden/uax29_words.tsv")).unwrap();
    let (mut cases, mut agree) = (0, 0);
    for line in golden.lines() {
        let (input, offsets) = line.split_once('\t').unwrap();
        let ours = SplitResult {
            spans: uax29_word_boundaries(input).windows(2).map(|w| WordSpan::new(w[0], w[1])).collect(),
        };
        cases += 1;
        if ours == SplitResult::from_offsets_string(offsets).unwrap() {
            agree += 1;
        }
    }
    let rules_ok = rules.iter().filter(|&&b| b).count();
    report(
        "splitter-suite",
        lossless == 10_000 && rules_ok == rules.len() && cases == 500 && agree == cases,
        &format!("lossless {lossless}/10000, rules {rules_ok}/{}, golden {agree}/{cases}", rules.len()),
    );
}

#[test]
fn c04_incremental_full_equivalence() {
    let p = warm_micro();
    let mut rng = common::rng(404);
    let (mut steps, mut worst, mut mismatches) = (0, 0.0f64, 0);
    for i in 0..50 {
        let prompt = if i % 2 == 0 {
            common::random_ascii(&mut rng, 32)
        } else {
            common::random_mixed(&mut rng, 12)
        };
        let r = check_equivalence(&p, prompt.as_bytes(), 64).unwrap();
        steps += r.steps;
        worst = worst.max(r.max_abs_diff);
        mismatches += r.byte_mismatches;
    }
    report(
        "incremental-full-equivalence",
        mismatches == 0 && worst <= 1e-4,
        &format!("50 prompts, {steps} logit rows, byte mismatches {mismatches}, max |dlogit| {worst:.3e} (f32)"),
    );
}

#[test]
fn c05_gradient_oracle() {
    let p = perturb_params(&init_params::<f64>(&HatConfig::micro(), 5), 0.3, 6);
    let text = "The keeper's log: FooBar, 3.14 + x = y!".as_bytes();
    let r = gradient_check(&p, text, 200, 1e-5, 7).unwrap();
    let groups = r.groups().len();
    let worst = r.max_rel_err();
    report(
        "gradient-oracle",
        r.entries.len() == 200 && groups == ParamGroup::ALL.len() && worst < 1e-4,
        &format!("200 coords over {groups} groups, max rel err {worst:.3e} (f64)"),
    );
}

#[test]
fn c06_overfit_smoke() {
    let c = HatConfig::micro();
    let sched = LrSchedule::toy(2000);
    let policy = GroupPolicy::default();
    let opts = TrainOptions {
        stop_below: Some(0.1),
        ..TrainOptions::default()
    };
    let t0 = std::time::Instant::now();
    let r = train_loop::<f32>(&c, CORPUS, &sched, &policy, 2000, 1, &opts).unwrap();
    let (step, loss) = *r.losses.last().unwrap();
    let again = train_loop::<f32>(&c, CORPUS, &sched, &policy, 50, 1, &TrainOptions::default()).unwrap();
    let deterministic = again.losses[..] == r.losses[..50];
    report(
        "overfit-smoke",
        loss < 0.1 && step <= 2000 && deterministic && CORPUS.len() <= 1024 && CORPUS.is_ascii(),
        &format!(
            "loss {loss:.4} at step {step} on {} ASCII bytes in {:.0?}; rerun deterministic: {deterministic}",
            CORPUS.len(),
            t0.elapsed()
        ),
    );
}

#[test]
fn c07_scheduler_accounting() {
    let p = warm_micro();
    let mut rng = common::rng(700);
    let prompts: Vec<String> = (0..100).map(|_| common::random_ascii(&mut rng, 24)).collect();
    let gen = |i: usize| GenConfig {
        sampling: Sampling::Temperature {
            temperature: 0.8,
            seed: i as u64,
        },
        max_new_bytes: 48,
    };
    let solo: Vec<_> = prompts
        .iter()
        .enumerate()
        .map(|(i, q)| generate(&p, q.as_bytes(), gen(i)).unwrap())
        .collect();
    let sp = Splitter::new(p.config.max_word_bytes).unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for policy in [Policy::BoundarySync, Policy::FixedByteStride(4)] {
        let mut b = Batch::new(&p, policy).unwrap();
        for (i, q) in prompts.iter().enumerate() {
            b.submit(q.as_bytes(), gen(i)).unwrap();
        }
        b.run().unwrap();
        let (mut prefill_words, mut closed_words) = (0, 0);
        let mut identical = 0;
        for (s, t) in b.sessions().iter().zip(&solo) {
            let pw = incremental_assignment(&sp, s.prompt()).unwrap().0.len();
            let all = incremental_assignment(&sp, &s.model_bytes()[1..]).unwrap().0.len();
            prefill_words += pw;
            closed_words += all - pw;
            if s.generated() == t.generated() && s.logits_digest() == t.logits_digest() {
                identical += 1;
            }
        }
        let st = b.stats();
        let expected = (closed_words + prefill_words + prompts.len()) as u64;
        let ok = identical == prompts.len() && (policy != Policy::BoundarySync || st.backbone_positions == expected);
        pass &= ok;
        details.push(format!(
            "{policy:?}: backbone positions {} = closed {closed_words} + prefill {prefill_words} + BOS {}, batched calls {}, identical {identical}/100",
            st.backbone_positions,
            prompts.len(),
            st.backbone_calls
        ));
    }
    report("scheduler-accounting", pass, &details.join("; "));
}

#[test]
fn c08_compression_sanity() {
    let sp = Splitter::default();
    let en = compression_report(&sp, &[manifest("data/english_sample.txt")]);
    let de = compression_report(&sp, &[manifest("data/german_sample.txt")]);
    let (e, d) = (en.bytes_per_position().unwrap_or(0.0), de.bytes_per_position().unwrap_or(0.0));
    report(
        "compression-sanity",
        (4.0..=7.0).contains(&e) && (4.5..=8.0).contains(&d),
        &format!(
            "english {} in [4.0, 7.0], german {} in [4.5, 8.0]",
            en.bytes_per_position_4dp().unwrap_or_default(),
            de.bytes_per_position_4dp().unwrap_or_default()
        ),
    );
}

#[test]
fn c09_freezing_semantics() {
    let c = HatConfig::micro();
    let k = 4;
    let policy = GroupPolicy::hatification(k);
    let sched = LrSchedule::toy(50);
    let init = init_params::<f32>(&c, 9);
    let backbone = |p: &ParamSet<f32>| -> Vec<Vec<u32>> {
        p.tensors()
            .into_iter()
            .filter(|(n, _)| ParamGroup::of(n) == ParamGroup::Backbone)
            .map(|(_, t)| t.data().iter().map(|x| x.to_bits()).collect())
            .collect()
    };
    let b0 = backbone(&init);
    let mut frozen_ok = true;
    for steps in 1..=k {
        let r = train_from(init.clone(), CORPUS, &sched, &policy, steps, 1, &TrainOptions::default(), |_, _| {}).unwrap();
        frozen_ok &= backbone(&r.params) == b0;
    }
    let r = train_from(init.clone(), CORPUS, &sched, &policy, k + 1, 1, &TrainOptions::default(), |_, _| {}).unwrap();
    let released = backbone(&r.params) != b0;

    // With unit gradients and no decay or clipping, a tensor's first Adam
    // update equals its effective learning rate (up to eps).
    let mut p64 = init_params::<f64>(&c, 9);
    let before = p64.clone();
    let mut g = p64.zeros_like();
    for (_, t) in g.tensors_mut() {
        t.fill(1.0);
    }
    let cfg = AdamConfig {
        weight_decay: 0.0,
        clip_norm: None,
        ..AdamConfig::default()
    };
    let base = 1e-3;
    Adam::new(&p64, cfg).step(&mut p64, &mut g, &policy, k + 1, base);
    let delta = |name: &str| before.get(name).unwrap().data()[0] - p64.get(name).unwrap().data()[0];
    let (d_enc, d_dec, d_bb) = (
        delta("encoder.layers.0.attn.q"),
        delta("decoder.layers.0.attn.q"),
        delta("backbone.layers.0.attn.q"),
    );
    let lr_ok = policy.lr_for("backbone.layers.0.attn.q", k + 1, base) == 0.1 * policy.lr_for("encoder.layers.0.attn.q", k + 1, base)
        && ((d_bb / d_enc) - 0.1).abs() < 1e-9
        && ((d_bb / d_dec) - 0.1).abs() < 1e-9;
    report(
        "freezing-semantics",
        frozen_ok && released && lr_ok,
        &format!(
            "K={k}: bit-identical through step {k}: {frozen_ok}, changed at step {}: {released}, backbone/encoder update ratio {:.10}",
            k + 1,
            d_bb / d_enc
        ),
    );
}

#[test]
fn c10_checkpoint_round_trip() {
    let p = warm_micro();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("warm.ckpt");
    save_checkpoint(&p, &path).unwrap();
    let q = load_checkpoint(&path).unwrap();
    let bits = |t: &[f32]| t.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let tensors_ok = q.config == p.config
        && p.tensors().len() == q.tensors().len()
        && p.tensors()
            .into_iter()
            .zip(q.tensors())
            .all(|((na, a), (nb, b))| na == nb && a.shape() == b.shape() && bits(a.data()) == bits(b.data()));
    let text = "Checkpoint check: FooBar, Grüße, 3.14!".as_bytes();
    let (fa, fb) = (forward(&p, text).unwrap(), forward(&q, text).unwrap());
    let forward_ok = bits(fa.logits.data()) == bits(fb.logits.data())
        && bits(fa.byte_states.data()) == bits(fb.byte_states.data())
        && bits(fa.word_embeddings.data()) == bits(fb.word_embeddings.data())
        && bits(fa.backbone_outputs.data()) == bits(fb.backbone_outputs.data());
    let ga = generate(&p, b"The ", GenConfig::greedy(32)).unwrap();
    let gb = generate(&q, b"The ", GenConfig::greedy(32)).unwrap();
    let gen_ok = ga.generated() == gb.generated() && ga.logits_digest() == gb.logits_digest();
    report(
        "checkpoint-round-trip",
        tensors_ok && forward_ok && gen_ok,
        &format!(
            "{} tensors bit-exact: {tensors_ok}; forward bit-exact: {forward_ok}; generation identical: {gen_ok}",
            p.tensors().len()
        ),
    );
}
