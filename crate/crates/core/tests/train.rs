use hat_core::model::{init_params, HatConfig, ParamGroup, ParamSet};
use hat_core::train::{
    format_loss_curve, gradient_check, loss, loss_and_grad, perturb_params, train_from, train_loop, GroupPolicy,
    LrSchedule, TrainOptions,
};
use hat_core::Error;

const CORPUS: &[u8] = include_bytes!("../data/overfit_1k.txt");

fn snapshot(p: &ParamSet<f32>, group: ParamGroup) -> Vec<(String, Vec<f32>)> {
    p.tensors()
        .into_iter()
        .filter(|(n, _)| ParamGroup::of(n) == group)
        .map(|(n, t)| (n, t.data().to_vec()))
        .collect()
}

#[test]
fn gradients_match_finite_differences() {
    let p = perturb_params(&init_params::<f64>(&HatConfig::micro(), 3), 0.3, 4);
    let r = gradient_check(&p, "Hi, FooBar x+y=z ok.".as_bytes(), 40, 1e-5, 9).unwrap();
    assert_eq!(r.groups().len(), ParamGroup::ALL.len());
    assert!(r.count_nonzero() > 30);
    assert!(r.max_rel_err() < 1e-4, "{:?}", r.worst());
}

#[test]
fn loss_matches_loss_and_grad_and_rejects_empty() {
    let p = init_params::<f64>(&HatConfig::micro(), 3);
    let (l, g) = loss_and_grad(&p, b"abc def").unwrap();
    assert_eq!(l, loss(&p, b"abc def").unwrap());
    assert!(g.is_finite());
    assert!(matches!(loss(&p, b""), Err(Error::TooShort(_))));
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let c = HatConfig::micro();
    let s = LrSchedule::toy(40);
    let opts = TrainOptions {
        window: Some(256),
        ..TrainOptions::default()
    };
    let a = train_loop::<f32>(&c, CORPUS, &s, &GroupPolicy::default(), 40, 7, &opts).unwrap();
    let b = train_loop::<f32>(&c, CORPUS, &s, &GroupPolicy::default(), 40, 7, &opts).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.params.tensors(), b.params.tensors());
    let first = a.losses[0].1;
    let last = a.losses.iter().rev().take(5).map(|l| l.1).sum::<f64>() / 5.0;
    assert!(last < first - 0.5, "{first} -> {last}");
    let curve = format_loss_curve(&a.losses);
    assert_eq!(curve.lines().count(), 40);
    assert!(curve.starts_with("1\t"));
}

#[test]
fn stop_below_ends_early() {
    let c = HatConfig::micro();
    let opts = TrainOptions {
        stop_below: Some(10.0),
        ..TrainOptions::default()
    };
    let r = train_loop::<f32>(&c, b"abc", &LrSchedule::toy(100), &GroupPolicy::default(), 100, 1, &opts).unwrap();
    assert_eq!(r.losses.len(), 1);
}

#[test]
fn frozen_backbone_is_bit_identical_until_release() {
    let c = HatConfig::micro();
    let k = 3;
    let policy = GroupPolicy::hatification(k);
    let sched = LrSchedule::toy(20);
    let init = init_params::<f32>(&c, 5);
    let bb0 = snapshot(&init, ParamGroup::Backbone);
    for steps in 1..=k + 1 {
        let r = train_from(init.clone(), CORPUS, &sched, &policy, steps, 1, &TrainOptions::default(), |_, _| {}).unwrap();
        let bb = snapshot(&r.params, ParamGroup::Backbone);
        if steps <= k {
            assert_eq!(bb, bb0, "backbone moved within {steps} steps");
        } else {
            assert_ne!(bb, bb0, "backbone did not move at step {steps}");
        }
        assert_ne!(snapshot(&r.params, ParamGroup::Encoder), snapshot(&init, ParamGroup::Encoder));
    }
    let enc_lr = policy.lr_for("encoder.layers.0.attn.q", k + 1, 3e-4);
    let bb_lr = policy.lr_for("backbone.layers.0.attn.q", k + 1, 3e-4);
    assert_eq!(bb_lr, 0.1 * enc_lr);
    assert_eq!(policy.lr_for("backbone.layers.0.attn.q", k, 3e-4), 0.0);
}

#[test]
fn query_key_only_leaves_everything_else() {
    let c = HatConfig::micro();
    let p = init_params::<f32>(&c, 5);
    let r = train_from(p.clone(), CORPUS, &LrSchedule::toy(10), &GroupPolicy::query_key_only(), 3, 1, &TrainOptions::default(), |_, _| {})
        .unwrap();
    for ((name, before), (_, after)) in p.tensors().into_iter().zip(r.params.tensors()) {
        let trains = name.ends_with("attn.q") || name.ends_with("attn.k");
        assert_eq!(before != after, trains, "{name}");
    }
}

#[test]
fn rejects_bad_corpus() {
    let c = HatConfig::micro();
    let s = LrSchedule::toy(10);
    let o = TrainOptions::default();
    assert!(matches!(
        train_loop::<f32>(&c, &[0xFF], &s, &GroupPolicy::default(), 1, 1, &o),
        Err(Error::MalformedInput { .. })
    ));
    assert!(matches!(
        train_loop::<f32>(&c, b"", &s, &GroupPolicy::default(), 1, 1, &o),
        Err(Error::TooShort(_))
    ));
}
