use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backward::loss_and_grad;
use super::schedule::{GroupPolicy, LrSchedule};
use crate::error::{Error, Result};
use crate::model::{decays, init_params, HatConfig, ParamSet};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
            clip_norm: Some(1.0),
        }
    }
}

/// Adam with decoupled weight decay. Moments and the bias-correction count
/// advance only on steps where a tensor actually trains.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: ParamSet<T>,
    v: ParamSet<T>,
    t: Vec<u64>,
}

/// What one optimizer step did.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    pub clip_scale: f64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let n = params.tensors().len();
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: vec![0; n],
        }
    }

    /// Zeroes gradients of frozen tensors, clips the rest by global norm and
    /// applies one update with base learning rate `lr` at 1-based `step`.
    pub fn step(
        &mut self,
        params: &mut ParamSet<T>,
        grads: &mut ParamSet<T>,
        policy: &GroupPolicy,
        step: u64,
        lr: f64,
    ) -> StepStats {
        let c = self.config;
        let mut sq = 0.0;
        for (name, g) in grads.tensors_mut() {
            if policy.trainable(&name, step) {
                sq += g.sum_sq();
            } else {
                g.fill(T::zero());
            }
        }
        let grad_norm = sq.sqrt();
        let clip_scale = match c.clip_norm {
            Some(max) if grad_norm > max => max / grad_norm,
            _ => 1.0,
        };
        let params_t = params.tensors_mut();
        let grads_t = grads.tensors();
        let m_t = self.m.tensors_mut();
        let v_t = self.v.tensors_mut();
        for (i, ((((name, p), (_, g)), (_, m)), (_, v))) in params_t.into_iter().zip(grads_t).zip(m_t).zip(v_t).enumerate() {
            let lr_eff = policy.lr_for(&name, step, lr);
            if !policy.trainable(&name, step) {
                continue;
            }
            self.t[i] += 1;
            let t = self.t[i] as i32;
            let bc1 = 1.0 - c.beta1.powi(t);
            let bc2 = 1.0 - c.beta2.powi(t);
            let wd = if decays(&name, p.shape()) { c.weight_decay } else { 0.0 };
            let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
            let scale = T::of(clip_scale);
            for (((w, &gr), mm), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let gr = gr * scale;
                *mm = b1 * *mm + (T::one() - b1) * gr;
                *vv = b2 * *vv + (T::one() - b2) * gr * gr;
                let mhat = mm.as_f64() / bc1;
                let vhat = vv.as_f64() / bc2;
                let upd = lr_eff * (mhat / (vhat.sqrt() + c.eps) + wd * w.as_f64());
                *w = T::of(w.as_f64() - upd);
            }
        }
        StepStats { grad_norm, clip_scale }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    /// Bytes per training window; `None` trains on the whole corpus each step.
    pub window: Option<usize>,
    pub adam: AdamConfig,
    /// Stop after the first step whose loss falls below this value.
    pub stop_below: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            window: None,
            adam: AdamConfig::default(),
            stop_below: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult<T> {
    pub params: ParamSet<T>,
    /// `(step, loss)` with the loss measured before that step's update.
    pub losses: Vec<(u64, f64)>,
}

impl<T> TrainResult<T> {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().map(|&(_, l)| l)
    }
}

/// `step<TAB>loss` per line.
pub fn format_loss_curve(losses: &[(u64, f64)]) -> String {
    let mut out = String::new();
    for (s, l) in losses {
        let _ = writeln!(out, "{s}\t{l:.6}");
    }
    out
}

/// Picks a window of at most `len` bytes whose ends fall on UTF-8 boundaries.
fn window<'a>(corpus: &'a str, len: Option<usize>, rng: &mut ChaCha8Rng) -> &'a str {
    match len {
        Some(len) if len < corpus.len() => {
            let mut start = rng.gen_range(0..=corpus.len() - len);
            while !corpus.is_char_boundary(start) {
                start -= 1;
            }
            let mut end = (start + len).min(corpus.len());
            while !corpus.is_char_boundary(end) {
                end -= 1;
            }
            &corpus[start..end]
        }
        _ => corpus,
    }
}

/// Trains from a fresh seeded initialization for `steps` steps.
pub fn train_loop<T: Scalar>(
    config: &HatConfig,
    corpus: &[u8],
    schedule: &LrSchedule,
    policy: &GroupPolicy,
    steps: u64,
    seed: u64,
    options: &TrainOptions,
) -> Result<TrainResult<T>> {
    train_from(init_params(config, seed), corpus, schedule, policy, steps, seed, options, |_, _| {})
}

/// Continues training `params`; `on_step(step, loss)` runs after each step.
#[allow(clippy::too_many_arguments)]
pub fn train_from<T: Scalar>(
    mut params: ParamSet<T>,
    corpus: &[u8],
    schedule: &LrSchedule,
    policy: &GroupPolicy,
    steps: u64,
    seed: u64,
    options: &TrainOptions,
    mut on_step: impl FnMut(u64, f64),
) -> Result<TrainResult<T>> {
    let text = crate::splitter::validate_utf8(corpus)?;
    if text.is_empty() {
        return Err(Error::TooShort("training corpus is empty".into()));
    }
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_696e);
    let mut adam = Adam::new(&params, options.adam);
    let mut losses = Vec::with_capacity(steps as usize);
    for step in 1..=steps {
        let sample = window(text, options.window, &mut rng);
        let (loss, mut grads) = loss_and_grad(&params, sample.as_bytes())?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        adam.step(&mut params, &mut grads, policy, step, schedule.lr_at(step));
        losses.push((step, loss));
        on_step(step, loss);
        if options.stop_below.is_some_and(|t| loss < t) {
            break;
        }
    }
    Ok(TrainResult { params, losses })
}
