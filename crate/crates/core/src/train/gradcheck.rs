use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::backward::loss_and_grad;
use crate::error::Result;
use crate::model::{sequence_bytes, ParamGroup, ParamSet};

/// Denominator floor for relative error, so coordinates whose true gradient
/// is (numerically) zero compare on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    /// Groups represented among the checked coordinates.
    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut g: Vec<_> = self.entries.iter().map(|e| ParamGroup::of(&e.tensor)).collect();
        g.sort();
        g.dedup();
        g
    }

    pub fn count_nonzero(&self) -> usize {
        self.entries.iter().filter(|e| e.analytic != 0.0).count()
    }
}

/// Adds `N(0, std)` noise to every parameter. Gradients at initialization
/// are tiny (weights have std 0.02), which leaves central differences
/// dominated by rounding; the oracle runs at a perturbed point instead.
pub fn perturb_params(params: &ParamSet<f64>, std: f64, seed: u64) -> ParamSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("valid std");
    let mut out = params.clone();
    for (_, t) in out.tensors_mut() {
        for x in t.data_mut() {
            *x += normal.sample(&mut rng);
        }
    }
    out
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

/// Compares analytic gradients with central differences at `n_coords`
/// coordinates, cycling through the parameter groups and picking a tensor
/// uniformly within each group. Byte-embedding rows are drawn from the bytes
/// present in the input, the only rows with a gradient.
pub fn gradient_check(params: &ParamSet<f64>, text: &[u8], n_coords: usize, step: f64, seed: u64) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_grad(params, text)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<(String, Vec<usize>)> = params
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let seq = sequence_bytes(text);
    let mut present: Vec<usize> = seq.iter().map(|&b| b as usize).collect();
    present.sort_unstable();
    present.dedup();

    let mut entries = Vec::with_capacity(n_coords);
    let mut work = params.clone();
    for k in 0..n_coords {
        let group = ParamGroup::ALL[k % ParamGroup::ALL.len()];
        let members: Vec<&(String, Vec<usize>)> = names.iter().filter(|(n, _)| ParamGroup::of(n) == group).collect();
        let (name, shape) = *members.choose(&mut rng).expect("every group has tensors");
        let numel: usize = shape.iter().product();
        let index = if name == "encoder.byte_embed" {
            let row = *present.choose(&mut rng).unwrap();
            row * shape[1] + rng.gen_range(0..shape[1])
        } else {
            rng.gen_range(0..numel)
        };
        let analytic = grads.get(name).unwrap().data()[index];
        let eval = |w: &mut ParamSet<f64>, delta: f64| -> Result<f64> {
            let slot = w.tensors_mut().into_iter().find(|(n, _)| n == name).unwrap().1;
            let orig = slot.data()[index];
            slot.data_mut()[index] = orig + delta;
            let l = super::backward::loss(w, text);
            let slot = w.tensors_mut().into_iter().find(|(n, _)| n == name).unwrap().1;
            slot.data_mut()[index] = orig;
            l
        };
        let plus = eval(&mut work, step)?;
        let minus = eval(&mut work, -step)?;
        let numeric = (plus - minus) / (2.0 * step);
        entries.push(GradCheckEntry {
            tensor: name.clone(),
            index,
            analytic,
            numeric,
            rel_err: rel_err(analytic, numeric),
        });
    }
    Ok(GradCheckReport { entries })
}
