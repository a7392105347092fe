use super::{axpy, dot, Scalar, Tensor};
use crate::error::{Error, Result};

/// `out[m×n] = a[m×k] · b[k×n]`, overwriting `out`.
pub fn matmul_into<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.iter_mut().for_each(|x| *x = T::zero());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != T::zero() {
                axpy(aip, &b[p * n..(p + 1) * n], row);
            }
        }
    }
}

/// `out[m×k] = dy[m×n] · bᵀ` where `b` is `k×n`.
pub fn matmul_bt<T: Scalar>(dy: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let dyi = &dy[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = dot(dyi, &b[p * n..(p + 1) * n]);
        }
    }
    out
}

/// `acc[k×n] += aᵀ · dy` where `a` is `m×k` and `dy` is `m×n`.
pub fn matmul_acc_at<T: Scalar>(a: &[T], dy: &[T], m: usize, k: usize, n: usize, acc: &mut [T]) {
    for i in 0..m {
        let dyi = &dy[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != T::zero() {
                axpy(aip, dyi, &mut acc[p * n..(p + 1) * n]);
            }
        }
    }
}

/// Matrix product of 2-D tensors.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::Shape("matmul expects 2-D tensors".into()));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions differ: {k} vs {k2}"
        )));
    }
    let mut out = vec![T::zero(); m * n];
    matmul_into(a.data(), b.data(), m, k, n, &mut out);
    Tensor::matrix(m, n, out)
}

/// Row-wise RMS normalization of a flat `rows×d` buffer. Returns the
/// normalized rows and the per-row inverse RMS.
pub fn rms_norm_rows<T: Scalar>(x: &[T], d: usize, eps: f64, gain: Option<&[T]>) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut rinv = Vec::with_capacity(rows);
    let eps = T::of(eps);
    let dn = T::of(d as f64);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let ms = dot(xr, xr) / dn;
        let ri = T::one() / (ms + eps).sqrt();
        rinv.push(ri);
        let yr = &mut y[r * d..(r + 1) * d];
        match gain {
            Some(g) => {
                for i in 0..d {
                    yr[i] = xr[i] * ri * g[i];
                }
            }
            None => {
                for i in 0..d {
                    yr[i] = xr[i] * ri;
                }
            }
        }
    }
    (y, rinv)
}

/// Backward of [`rms_norm_rows`]: returns `dx`, accumulating into `dgain`.
pub fn rms_norm_backward<T: Scalar>(
    x: &[T],
    rinv: &[T],
    d: usize,
    gain: Option<&[T]>,
    dy: &[T],
    mut dgain: Option<&mut [T]>,
) -> Vec<T> {
    let rows = x.len() / d;
    let mut dx = vec![T::zero(); x.len()];
    let dn = T::of(d as f64);
    let mut u = vec![T::zero(); d];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let ri = rinv[r];
        for i in 0..d {
            u[i] = match gain {
                Some(g) => g[i] * dyr[i],
                None => dyr[i],
            };
        }
        if let Some(dg) = dgain.as_deref_mut() {
            for i in 0..d {
                dg[i] += dyr[i] * xr[i] * ri;
            }
        }
        let coef = dot(&u, xr) * ri * ri * ri / dn;
        let dxr = &mut dx[r * d..(r + 1) * d];
        for i in 0..d {
            dxr[i] = u[i] * ri - xr[i] * coef;
        }
    }
    dx
}

/// RMSNorm over the last dimension: `x / sqrt(mean(x²) + eps)`, scaled by
/// `gain` when present.
pub fn rms_norm<T: Scalar>(x: &Tensor<T>, eps: f64, gain: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    if eps < 0.0 {
        return Err(Error::Shape(format!("rms_norm eps must be >= 0, got {eps}")));
    }
    let d = x.cols();
    if let Some(g) = gain {
        if g.numel() != d {
            return Err(Error::Shape(format!(
                "rms_norm gain has {} entries for dimension {d}",
                g.numel()
            )));
        }
    }
    let (y, _) = rms_norm_rows(x.data(), d, eps, gain.map(|g| g.data()));
    Tensor::new(x.shape().to_vec(), y)
}

pub fn silu<T: Scalar>(a: T) -> T {
    a / (T::one() + (-a).exp())
}

pub fn silu_grad<T: Scalar>(a: T) -> T {
    let s = T::one() / (T::one() + (-a).exp());
    s * (T::one() + a * (T::one() - s))
}

/// Intermediate activations of a SwiGLU feed-forward pass.
#[derive(Clone, Debug)]
pub struct SwigluCache<T> {
    pub gate: Vec<T>,
    pub up: Vec<T>,
    pub hidden: Vec<T>,
}

/// `y = (silu(x·Wg) ⊙ (x·Wu)) · Wd` over a flat `rows×h` buffer.
pub fn swiglu_forward<T: Scalar>(
    x: &[T],
    rows: usize,
    h: usize,
    inter: usize,
    w_gate: &[T],
    w_up: &[T],
    w_down: &[T],
) -> (Vec<T>, SwigluCache<T>) {
    let mut gate = vec![T::zero(); rows * inter];
    let mut up = vec![T::zero(); rows * inter];
    matmul_into(x, w_gate, rows, h, inter, &mut gate);
    matmul_into(x, w_up, rows, h, inter, &mut up);
    let hidden: Vec<T> = gate.iter().zip(&up).map(|(&g, &u)| silu(g) * u).collect();
    let mut y = vec![T::zero(); rows * h];
    matmul_into(&hidden, w_down, rows, inter, h, &mut y);
    (y, SwigluCache { gate, up, hidden })
}

/// Backward of [`swiglu_forward`]; accumulates weight gradients and returns `dx`.
#[allow(clippy::too_many_arguments)]
pub fn swiglu_backward<T: Scalar>(
    x: &[T],
    rows: usize,
    h: usize,
    inter: usize,
    w_gate: &[T],
    w_up: &[T],
    w_down: &[T],
    cache: &SwigluCache<T>,
    dy: &[T],
    dw_gate: &mut [T],
    dw_up: &mut [T],
    dw_down: &mut [T],
) -> Vec<T> {
    matmul_acc_at(&cache.hidden, dy, rows, inter, h, dw_down);
    let dhidden = matmul_bt(dy, w_down, rows, h, inter);
    let mut dgate = vec![T::zero(); rows * inter];
    let mut dup = vec![T::zero(); rows * inter];
    for i in 0..rows * inter {
        let g = cache.gate[i];
        dgate[i] = dhidden[i] * cache.up[i] * silu_grad(g);
        dup[i] = dhidden[i] * silu(g);
    }
    matmul_acc_at(x, &dgate, rows, h, inter, dw_gate);
    matmul_acc_at(x, &dup, rows, h, inter, dw_up);
    let mut dx = matmul_bt(&dgate, w_gate, rows, inter, h);
    let dx2 = matmul_bt(&dup, w_up, rows, inter, h);
    for (a, b) in dx.iter_mut().zip(dx2) {
        *a += b;
    }
    dx
}

/// SwiGLU feed-forward block over a 2-D input.
pub fn swiglu_ffn<T: Scalar>(
    x: &Tensor<T>,
    w_gate: &Tensor<T>,
    w_up: &Tensor<T>,
    w_down: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (rows, h) = (x.rows(), x.cols());
    if w_gate.shape().len() != 2 || w_gate.shape()[0] != h {
        return Err(Error::Shape(format!(
            "W_gate {:?} does not map width {h}",
            w_gate.shape()
        )));
    }
    let inter = w_gate.shape()[1];
    if w_up.shape() != w_gate.shape() || w_down.shape() != [inter, h] {
        return Err(Error::Shape(format!(
            "SwiGLU weights disagree: gate {:?}, up {:?}, down {:?}",
            w_gate.shape(),
            w_up.shape(),
            w_down.shape()
        )));
    }
    let (y, _) = swiglu_forward(x.data(), rows, h, inter, w_gate.data(), w_up.data(), w_down.data());
    Tensor::matrix(rows, h, y)
}

/// Rotates consecutive pairs of each `head_dim` chunk of `row` by
/// `sign · pos · base^(-2i/head_dim)`. `sign = -1` inverts the rotation.
pub fn rope_rotate<T: Scalar>(row: &mut [T], pos: usize, base: f64, head_dim: usize, sign: f64) {
    let half = head_dim / 2;
    for head in row.chunks_exact_mut(head_dim) {
        for i in 0..half {
            let freq = base.powf(-2.0 * i as f64 / head_dim as f64);
            let angle = sign * pos as f64 * freq;
            let (s, c) = (T::of(angle.sin()), T::of(angle.cos()));
            let (a, b) = (head[2 * i], head[2 * i + 1]);
            head[2 * i] = a * c - b * s;
            head[2 * i + 1] = a * s + b * c;
        }
    }
}

/// Rotary position embedding applied to every `head_dim` chunk of each row
/// of `x` (shape `[seq, n_heads·head_dim]`).
pub fn rope_apply<T: Scalar>(
    x: &Tensor<T>,
    positions: &[usize],
    base: f64,
    head_dim: usize,
) -> Result<Tensor<T>> {
    if head_dim == 0 || head_dim % 2 != 0 {
        return Err(Error::Shape(format!("RoPE head dimension must be even, got {head_dim}")));
    }
    if x.cols() % head_dim != 0 {
        return Err(Error::Shape(format!(
            "width {} is not a multiple of head dimension {head_dim}",
            x.cols()
        )));
    }
    if positions.len() != x.rows() {
        return Err(Error::Shape(format!(
            "{} positions for {} rows",
            positions.len(),
            x.rows()
        )));
    }
    let mut out = x.clone();
    for (r, &p) in positions.iter().enumerate() {
        rope_rotate(out.row_mut(r), p, base, head_dim, 1.0);
    }
    Ok(out)
}

/// `cap · tanh(x / cap)`.
pub fn softcap<T: Scalar>(x: T, cap: T) -> T {
    cap * (x / cap).tanh()
}
