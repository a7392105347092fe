use std::ops::Range;

use super::{axpy, dot, Scalar, Tensor};
use crate::error::{Error, Result};

/// Which keys each query may see. Positions are absolute: query `i` sits at
/// `AttnSpec::q_pos0 + i` and key `j` at `AttnSpec::k_pos0 + j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mask {
    /// Key visible iff its position ≤ the query position.
    Causal,
    /// Causal, and the key is one of the query itself plus `W − 1` predecessors.
    Sliding(usize),
    /// Query `i` sees exactly the local key indices `ranges[i]`.
    CrossSegments(Vec<Range<usize>>),
}

#[derive(Clone, Debug)]
pub struct AttnSpec {
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub softcap: Option<f64>,
    pub mask: Mask,
    pub q_pos0: usize,
    pub k_pos0: usize,
}

impl AttnSpec {
    pub fn new(n_heads: usize, n_kv_heads: usize, head_dim: usize, mask: Mask) -> Self {
        Self {
            n_heads,
            n_kv_heads,
            head_dim,
            softcap: None,
            mask,
            q_pos0: 0,
            k_pos0: 0,
        }
    }

    pub fn with_softcap(mut self, cap: Option<f64>) -> Self {
        self.softcap = cap;
        self
    }

    pub fn with_offsets(mut self, q_pos0: usize, k_pos0: usize) -> Self {
        self.q_pos0 = q_pos0;
        self.k_pos0 = k_pos0;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.n_kv_heads == 0 || self.head_dim == 0 {
            return Err(Error::Shape("attention needs non-zero heads and head size".into()));
        }
        if self.n_heads % self.n_kv_heads != 0 {
            return Err(Error::Shape(format!(
                "{} query heads not divisible by {} key-value heads",
                self.n_heads, self.n_kv_heads
            )));
        }
        if let Mask::Sliding(0) = self.mask {
            return Err(Error::Shape("sliding window must be at least 1".into()));
        }
        if let Some(c) = self.softcap {
            if !(c > 0.0) {
                return Err(Error::Shape(format!("softcap must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Local key range visible to query `i` among `nk` keys.
    fn key_range(&self, i: usize, nk: usize) -> Range<usize> {
        let k_end = self.k_pos0 + nk;
        let (lo, hi) = match &self.mask {
            Mask::CrossSegments(r) => return r[i].clone(),
            Mask::Causal => (0, self.q_pos0 + i + 1),
            Mask::Sliding(w) => {
                let p = self.q_pos0 + i;
                ((p + 1).saturating_sub(*w), p + 1)
            }
        };
        let lo = lo.max(self.k_pos0);
        let hi = hi.min(k_end);
        if hi <= lo {
            return 0..0;
        }
        lo - self.k_pos0..hi - self.k_pos0
    }
}

/// Softmax weights (and softcap tanh values) saved for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct AttnCache<T> {
    pub ranges: Vec<Range<usize>>,
    /// Start of query `i`'s block in `probs`; block holds `n_heads` rows of
    /// `ranges[i].len()` weights.
    offsets: Vec<usize>,
    pub probs: Vec<T>,
    tanh: Option<Vec<T>>,
}

impl<T: Scalar> AttnCache<T> {
    /// Softmax weights of query `i`, head `h`, over its visible keys.
    pub fn weights(&self, i: usize, h: usize) -> &[T] {
        let n = self.ranges[i].len();
        let o = self.offsets[i] + h * n;
        &self.probs[o..o + n]
    }
}

/// Scaled dot-product attention over flat buffers.
///
/// `q` is `nq × (n_heads·head_dim)`; `k` and `v` are
/// `nk × (n_kv_heads·head_dim)`. Query head `h` reads key-value head
/// `h / (n_heads / n_kv_heads)`.
pub fn attention_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    nq: usize,
    nk: usize,
    spec: &AttnSpec,
) -> Result<(Vec<T>, AttnCache<T>)> {
    spec.validate()?;
    let (nh, hd) = (spec.n_heads, spec.head_dim);
    let qw = nh * hd;
    let kw = spec.n_kv_heads * hd;
    if q.len() != nq * qw || k.len() != nk * kw || v.len() != nk * kw {
        return Err(Error::Shape(format!(
            "attention buffers: q {} (want {}), k {} / v {} (want {})",
            q.len(),
            nq * qw,
            k.len(),
            v.len(),
            nk * kw
        )));
    }
    if let Mask::CrossSegments(r) = &spec.mask {
        if r.len() != nq {
            return Err(Error::Shape(format!("{} segments for {nq} queries", r.len())));
        }
    }
    let group = nh / spec.n_kv_heads;
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let cap = spec.softcap.map(T::of);

    let mut ranges = Vec::with_capacity(nq);
    let mut offsets = Vec::with_capacity(nq);
    let mut total = 0;
    for i in 0..nq {
        let r = spec.key_range(i, nk);
        if r.is_empty() || r.end > nk {
            return Err(Error::Invariant(format!(
                "query {} has no visible keys ({r:?} of {nk})",
                spec.q_pos0 + i
            )));
        }
        offsets.push(total);
        total += r.len() * nh;
        ranges.push(r);
    }
    let mut probs = vec![T::zero(); total];
    let mut tanh = cap.map(|_| vec![T::zero(); total]);
    let mut out = vec![T::zero(); nq * qw];

    for i in 0..nq {
        let r = ranges[i].clone();
        let n = r.len();
        for h in 0..nh {
            let g = h / group;
            let qi = &q[i * qw + h * hd..i * qw + (h + 1) * hd];
            let o = offsets[i] + h * n;
            let p = &mut probs[o..o + n];
            for (t, j) in r.clone().enumerate() {
                let kj = &k[j * kw + g * hd..j * kw + (g + 1) * hd];
                let mut s = dot(qi, kj) * scale;
                if let Some(c) = cap {
                    let th = (s / c).tanh();
                    tanh.as_mut().unwrap()[o + t] = th;
                    s = c * th;
                }
                p[t] = s;
            }
            let m = p.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for x in p.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            for x in p.iter_mut() {
                *x /= z;
            }
            let oi = &mut out[i * qw + h * hd..i * qw + (h + 1) * hd];
            for (t, j) in r.clone().enumerate() {
                axpy(p[t], &v[j * kw + g * hd..j * kw + (g + 1) * hd], oi);
            }
        }
    }
    Ok((
        out,
        AttnCache {
            ranges,
            offsets,
            probs,
            tanh,
        },
    ))
}

/// Gradients of [`attention_forward`] with respect to `q`, `k` and `v`.
pub fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    nq: usize,
    nk: usize,
    spec: &AttnSpec,
    cache: &AttnCache<T>,
    dout: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (nh, hd) = (spec.n_heads, spec.head_dim);
    let qw = nh * hd;
    let kw = spec.n_kv_heads * hd;
    let group = nh / spec.n_kv_heads;
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let mut dq = vec![T::zero(); nq * qw];
    let mut dk = vec![T::zero(); nk * kw];
    let mut dv = vec![T::zero(); nk * kw];
    let mut ds = Vec::new();
    for i in 0..nq {
        let r = cache.ranges[i].clone();
        let n = r.len();
        for h in 0..nh {
            let g = h / group;
            let o = cache.offsets[i] + h * n;
            let p = &cache.probs[o..o + n];
            let doi = &dout[i * qw + h * hd..i * qw + (h + 1) * hd];
            ds.clear();
            let mut sum = T::zero();
            for (t, j) in r.clone().enumerate() {
                let vj = j * kw + g * hd;
                let dp = dot(doi, &v[vj..vj + hd]);
                axpy(p[t], doi, &mut dv[vj..vj + hd]);
                ds.push(dp);
                sum += p[t] * dp;
            }
            let qi = i * qw + h * hd;
            for (t, j) in r.clone().enumerate() {
                let mut d = p[t] * (ds[t] - sum);
                if let Some(th) = &cache.tanh {
                    let th = th[o + t];
                    d *= T::one() - th * th;
                }
                let d = d * scale;
                let kj = j * kw + g * hd;
                axpy(d, &k[kj..kj + hd], &mut dq[qi..qi + hd]);
                axpy(d, &q[qi..qi + hd], &mut dk[kj..kj + hd]);
            }
        }
    }
    (dq, dk, dv)
}

/// Tensor-level attention: `q` is `[nq, n_heads·head_dim]`, `k`/`v` are
/// `[nk, n_kv_heads·head_dim]`.
pub fn attention<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, spec: &AttnSpec) -> Result<Tensor<T>> {
    if k.shape() != v.shape() {
        return Err(Error::Shape(format!(
            "key shape {:?} differs from value shape {:?}",
            k.shape(),
            v.shape()
        )));
    }
    let (out, _) = attention_forward(q.data(), k.data(), v.data(), q.rows(), k.rows(), spec)?;
    Tensor::matrix(q.rows(), spec.n_heads * spec.head_dim, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn single_key_returns_value() {
        let q = Tensor::<f64>::from_f64(&[1, 2], &[3.0, -7.0]).unwrap();
        let k = Tensor::from_f64(&[1, 2], &[0.5, 0.25]).unwrap();
        let v = Tensor::from_f64(&[1, 2], &[1.5, -2.5]).unwrap();
        let spec = AttnSpec::new(1, 1, 2, Mask::Causal);
        assert_eq!(attention(&q, &k, &v, &spec).unwrap().data(), v.data());
    }

    #[test]
    fn sliding_one_is_identity_on_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 5;
        let q = Tensor::<f64>::from_f64(&[n, 4], &random(&mut rng, n * 4)).unwrap();
        let k = Tensor::from_f64(&[n, 4], &random(&mut rng, n * 4)).unwrap();
        let v = Tensor::from_f64(&[n, 4], &random(&mut rng, n * 4)).unwrap();
        let spec = AttnSpec::new(2, 2, 2, Mask::Sliding(1));
        assert_eq!(attention(&q, &k, &v, &spec).unwrap(), v);
    }

    #[test]
    fn rows_sum_to_one_with_gqa_and_softcap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (nq, hd) = (7, 4);
        let q = random(&mut rng, nq * 4 * hd);
        let k = random(&mut rng, nq * 2 * hd);
        let v = random(&mut rng, nq * 2 * hd);
        let spec = AttnSpec::new(4, 2, hd, Mask::Sliding(3)).with_softcap(Some(2.0));
        let (_, cache) = attention_forward(&q, &k, &v, nq, nq, &spec).unwrap();
        for i in 0..nq {
            assert_eq!(cache.ranges[i].len(), (i + 1).min(3));
            for h in 0..4 {
                let s: f64 = cache.weights(i, h).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sliding_mask_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, w) = (10, 3);
        let q = random(&mut rng, n * 4);
        let mut k = random(&mut rng, n * 4);
        let mut v = random(&mut rng, n * 4);
        let spec = AttnSpec::new(1, 1, 4, Mask::Sliding(w));
        let (a, _) = attention_forward(&q, &k, &v, n, n, &spec).unwrap();
        // keys 0..4 are out of reach of query 9
        for x in &mut k[..4 * 4] {
            *x += 10.0;
        }
        for x in &mut v[..4 * 4] {
            *x -= 3.0;
        }
        let (b, _) = attention_forward(&q, &k, &v, n, n, &spec).unwrap();
        assert_eq!(&a[9 * 4..], &b[9 * 4..]);
        assert_eq!(&a[6 * 4..7 * 4], &b[6 * 4..7 * 4]);
    }

    #[test]
    fn offsets_select_the_same_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, w) = (9, 4);
        let q = random(&mut rng, n * 2);
        let k = random(&mut rng, n * 2);
        let v = random(&mut rng, n * 2);
        let full = AttnSpec::new(1, 1, 2, Mask::Sliding(w));
        let (a, _) = attention_forward(&q, &k, &v, n, n, &full).unwrap();
        // last query against only the window of keys it needs
        let part = AttnSpec::new(1, 1, 2, Mask::Sliding(w)).with_offsets(n - 1, n - w);
        let (b, _) = attention_forward(&q[(n - 1) * 2..], &k[(n - w) * 2..], &v[(n - w) * 2..], 1, w, &part).unwrap();
        assert_eq!(&a[(n - 1) * 2..], &b[..]);
    }

    #[test]
    fn empty_segment_is_an_invariant_error() {
        let spec = AttnSpec::new(1, 1, 2, Mask::CrossSegments(vec![0..0]));
        let r = attention_forward(&[0.0f64; 2], &[0.0; 2], &[0.0; 2], 1, 1, &spec);
        assert!(matches!(r, Err(Error::Invariant(_))));
    }

    #[test]
    fn f32_agrees_with_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, hd) = (6, 8);
        let q = Tensor::<f64>::from_f64(&[n, 2 * hd], &random(&mut rng, n * 2 * hd)).unwrap();
        let k = Tensor::from_f64(&[n, hd], &random(&mut rng, n * hd)).unwrap();
        let v = Tensor::from_f64(&[n, hd], &random(&mut rng, n * hd)).unwrap();
        let spec = AttnSpec::new(2, 1, hd, Mask::Causal).with_softcap(Some(100.0));
        let a = attention(&q, &k, &v, &spec).unwrap();
        let b = attention(&q.convert::<f32>(), &k.convert(), &v.convert(), &spec).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - *y as f64).abs() <= 1e-3 * x.abs().max(1e-3));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (n, hd) = (5, 4);
        let q = random(&mut rng, n * 2 * hd);
        let k = random(&mut rng, n * hd);
        let v = random(&mut rng, n * hd);
        let w = random(&mut rng, n * 2 * hd);
        let spec = AttnSpec::new(2, 1, hd, Mask::Sliding(3)).with_softcap(Some(0.7));
        let f = |q: &[f64], k: &[f64], v: &[f64]| {
            let (o, _) = attention_forward(q, k, v, n, n, &spec).unwrap();
            dot(&o, &w)
        };
        let (_, cache) = attention_forward(&q, &k, &v, n, n, &spec).unwrap();
        let (dq, dk, dv) = attention_backward(&q, &k, &v, n, n, &spec, &cache, &w);
        let h = 1e-6;
        let check = |analytic: &[f64], which: usize| {
            for idx in 0..analytic.len() {
                let (mut a, mut b, mut c) = (q.clone(), k.clone(), v.clone());
                let (mut a2, mut b2, mut c2) = (q.clone(), k.clone(), v.clone());
                match which {
                    0 => {
                        a[idx] += h;
                        a2[idx] -= h;
                    }
                    1 => {
                        b[idx] += h;
                        b2[idx] -= h;
                    }
                    _ => {
                        c[idx] += h;
                        c2[idx] -= h;
                    }
                }
                let num = (f(&a, &b, &c) - f(&a2, &b2, &c2)) / (2.0 * h);
                assert!((num - analytic[idx]).abs() < 1e-7, "{which}/{idx}: {num} vs {}", analytic[idx]);
            }
        };
        check(&dq, 0);
        check(&dk, 1);
        check(&dv, 2);
    }
}
