//! Forward passes of the building blocks. Each returns a tape holding the
//! intermediates its backward pass (in `train::backward`) needs, and the
//! post-RoPE keys and values a KV cache stores.

use std::ops::Range;

use super::config::{HatConfig, StackConfig};
use super::params::{BlockParams, ConnectorParams, CrossParams};
use crate::error::Result;
use crate::splitter::WordSpan;
use crate::tensor::{
    attention_forward, matmul_into, rms_norm_rows, rope_rotate, swiglu_forward, AttnCache, AttnSpec, Mask, Scalar,
    SwigluCache, Tensor,
};

/// Model-wide attention and norm settings.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Hyper {
    pub eps: f64,
    pub qk_norm: bool,
    pub softcap: Option<f64>,
}

impl Hyper {
    pub fn of(c: &HatConfig) -> Self {
        Self {
            eps: c.norm_eps,
            qk_norm: c.qk_norm,
            softcap: c.softcap,
        }
    }
}

/// `x[n×w.rows] · w`.
pub(crate) fn linear<T: Scalar>(x: &[T], n: usize, w: &Tensor<T>) -> Vec<T> {
    let (k, m) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![T::zero(); n * m];
    matmul_into(x, w.data(), n, k, m, &mut out);
    out
}

/// Previously cached keys/values (post-RoPE) prepended to the new rows.
pub(crate) struct KvView<'a, T> {
    pub k: &'a [T],
    pub v: &'a [T],
    pub pos0: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct AttnTape<T> {
    pub n1: Vec<T>,
    pub r1: Vec<T>,
    /// Projections before QK-norm; equal to the normed ones when disabled.
    pub q_raw: Vec<T>,
    pub k_raw: Vec<T>,
    pub q_rinv: Vec<T>,
    pub k_rinv: Vec<T>,
    pub qr: Vec<T>,
    pub kr: Vec<T>,
    pub v: Vec<T>,
    pub cache: AttnCache<T>,
    pub spec: AttnSpec,
    pub a: Vec<T>,
}

#[derive(Clone, Debug)]
pub(crate) struct BlockTape<T> {
    pub n: usize,
    pub pos0: usize,
    pub x0: Vec<T>,
    pub attn: AttnTape<T>,
    pub x1: Vec<T>,
    pub n2: Vec<T>,
    pub r2: Vec<T>,
    pub mlp: SwigluCache<T>,
}

fn qk_norm<T: Scalar>(x: &[T], head: usize, hy: &Hyper) -> (Vec<T>, Vec<T>) {
    if hy.qk_norm {
        rms_norm_rows(x, head, hy.eps, None)
    } else {
        (x.to_vec(), Vec::new())
    }
}

/// Row-wise first half of a block: norm, projections, QK-norm and RoPE.
/// `positions[i]` is the absolute position of row `i`.
fn attn_inputs<T: Scalar>(
    p: &BlockParams<T>,
    s: &StackConfig,
    hy: &Hyper,
    x: &[T],
    n: usize,
    positions: &[usize],
) -> AttnTape<T> {
    let hs = s.head_size;
    let (n1, r1) = rms_norm_rows(x, s.hidden, hy.eps, Some(p.attn_norm.data()));
    let q_raw = linear(&n1, n, &p.attn.q);
    let k_raw = linear(&n1, n, &p.attn.k);
    let v = linear(&n1, n, &p.attn.v);
    let (mut qr, q_rinv) = qk_norm(&q_raw, hs, hy);
    let (mut kr, k_rinv) = qk_norm(&k_raw, hs, hy);
    for (i, &pos) in positions.iter().enumerate() {
        rope_rotate(&mut qr[i * s.q_dim()..(i + 1) * s.q_dim()], pos, s.rope_base, hs, 1.0);
        rope_rotate(&mut kr[i * s.kv_dim()..(i + 1) * s.kv_dim()], pos, s.rope_base, hs, 1.0);
    }
    AttnTape {
        n1,
        r1,
        q_raw,
        k_raw,
        q_rinv,
        k_rinv,
        qr,
        kr,
        v,
        cache: AttnCache::default(),
        spec: AttnSpec::new(s.n_heads, s.n_kv_heads, hs, Mask::Causal),
        a: Vec::new(),
    }
}

fn self_mask(s: &StackConfig) -> Mask {
    match s.window {
        Some(w) => Mask::Sliding(w),
        None => Mask::Causal,
    }
}

/// Attention of `n` new rows at `pos0..` over `past` (if any) plus themselves.
fn self_attend<T: Scalar>(
    s: &StackConfig,
    hy: &Hyper,
    qr: &[T],
    kr: &[T],
    v: &[T],
    n: usize,
    pos0: usize,
    past: Option<&KvView<'_, T>>,
) -> Result<(Vec<T>, AttnCache<T>, AttnSpec)> {
    let spec = AttnSpec::new(s.n_heads, s.n_kv_heads, s.head_size, self_mask(s)).with_softcap(hy.softcap);
    match past {
        None => {
            let spec = spec.with_offsets(pos0, pos0);
            let (a, c) = attention_forward(qr, kr, v, n, n, &spec)?;
            Ok((a, c, spec))
        }
        Some(kv) => {
            let nk_past = kv.k.len() / s.kv_dim();
            let keys = [kv.k, kr].concat();
            let vals = [kv.v, v].concat();
            let spec = spec.with_offsets(pos0, kv.pos0);
            let (a, c) = attention_forward(qr, &keys, &vals, n, nk_past + n, &spec)?;
            Ok((a, c, spec))
        }
    }
}

/// Row-wise second half: output projection, residual, SwiGLU, residual.
fn attn_output_mlp<T: Scalar>(
    p: &BlockParams<T>,
    s: &StackConfig,
    hy: &Hyper,
    x: &[T],
    a: &[T],
    n: usize,
) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>, SwigluCache<T>) {
    let h = s.hidden;
    let o = linear(a, n, &p.attn.o);
    let x1: Vec<T> = x.iter().zip(&o).map(|(&a, &b)| a + b).collect();
    let (n2, r2) = rms_norm_rows(&x1, h, hy.eps, Some(p.mlp_norm.data()));
    let (m, mlp) = swiglu_forward(&n2, n, h, s.intermediate(), p.mlp.gate.data(), p.mlp.up.data(), p.mlp.down.data());
    let y: Vec<T> = x1.iter().zip(&m).map(|(&a, &b)| a + b).collect();
    (y, x1, n2, r2, mlp)
}

/// Pre-norm self-attention + SwiGLU block over `n` rows at absolute
/// positions `pos0..pos0+n`, optionally attending to cached rows as well.
pub(crate) fn block_forward<T: Scalar>(
    p: &BlockParams<T>,
    s: &StackConfig,
    hy: &Hyper,
    x: &[T],
    n: usize,
    pos0: usize,
    past: Option<KvView<'_, T>>,
) -> Result<(Vec<T>, BlockTape<T>)> {
    let positions: Vec<usize> = (pos0..pos0 + n).collect();
    let mut attn = attn_inputs(p, s, hy, x, n, &positions);
    let (a, cache, spec) = self_attend(s, hy, &attn.qr, &attn.kr, &attn.v, n, pos0, past.as_ref())?;
    let (y, x1, n2, r2, mlp) = attn_output_mlp(p, s, hy, x, &a, n);
    attn.a = a;
    attn.cache = cache;
    attn.spec = spec;
    Ok((
        y,
        BlockTape {
            n,
            pos0,
            x0: x.to_vec(),
            attn,
            x1,
            n2,
            r2,
            mlp,
        },
    ))
}

/// One group of consecutive rows in a batched step, with its own cache.
pub(crate) struct Segment<'a, T> {
    pub n: usize,
    pub pos0: usize,
    pub past: Option<KvView<'a, T>>,
}

/// Batched inference step: row-wise work runs once over the stacked rows of
/// all segments, attention runs per segment against that segment's cache.
/// Each row's result is bit-identical to running its segment alone.
/// Returns the outputs and each segment's new (post-RoPE) key and value rows.
#[allow(clippy::type_complexity)]
pub(crate) fn block_step<T: Scalar>(
    p: &BlockParams<T>,
    s: &StackConfig,
    hy: &Hyper,
    x: &[T],
    segments: &[Segment<'_, T>],
) -> Result<(Vec<T>, Vec<(Vec<T>, Vec<T>)>)> {
    let n: usize = segments.iter().map(|g| g.n).sum();
    let positions: Vec<usize> = segments.iter().flat_map(|g| g.pos0..g.pos0 + g.n).collect();
    let t = attn_inputs(p, s, hy, x, n, &positions);
    let (qd, kvd) = (s.q_dim(), s.kv_dim());
    let mut a = Vec::with_capacity(n * qd);
    let mut new_kv = Vec::with_capacity(segments.len());
    let mut r0 = 0;
    for g in segments {
        let r = r0..r0 + g.n;
        let qr = &t.qr[r.start * qd..r.end * qd];
        let kr = &t.kr[r.start * kvd..r.end * kvd];
        let v = &t.v[r.start * kvd..r.end * kvd];
        let (ag, _, _) = self_attend(s, hy, qr, kr, v, g.n, g.pos0, g.past.as_ref())?;
        a.extend_from_slice(&ag);
        new_kv.push((kr.to_vec(), v.to_vec()));
        r0 = r.end;
    }
    let (y, ..) = attn_output_mlp(p, s, hy, x, &a, n);
    Ok((y, new_kv))
}

#[derive(Clone, Debug)]
pub(crate) struct CrossTape<T> {
    pub n: usize,
    pub m: usize,
    pub x0: Vec<T>,
    pub ctx: Vec<T>,
    pub xn: Vec<T>,
    pub rx: Vec<T>,
    pub cn: Vec<T>,
    pub rc: Vec<T>,
    pub q_raw: Vec<T>,
    pub k_raw: Vec<T>,
    pub q_rinv: Vec<T>,
    pub k_rinv: Vec<T>,
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    pub cache: AttnCache<T>,
    pub spec: AttnSpec,
    pub a: Vec<T>,
    pub o: Vec<T>,
    pub ro: Vec<T>,
}

/// Decoder cross-attention: byte `i` attends to the single context row
/// `word_of[i]` of `ctx` (`m` backbone rows).
/// `y = x + post_norm(O · attn(Q·pre_norm(x), K·kv_norm(ctx), V·kv_norm(ctx)))`.
pub(crate) fn cross_forward<T: Scalar>(
    p: &CrossParams<T>,
    c: &HatConfig,
    hy: &Hyper,
    x: &[T],
    n: usize,
    ctx: &[T],
    word_of: &[usize],
) -> Result<(Vec<T>, CrossTape<T>)> {
    let hd = c.decoder.hidden;
    let hb = c.backbone.hidden;
    let m = ctx.len() / hb;
    let heads = c.connector.decoder_cross_heads;
    let hs = c.head_size_cross_decoder();
    let (xn, rx) = rms_norm_rows(x, hd, hy.eps, Some(p.pre_norm.data()));
    let (cn, rc) = rms_norm_rows(ctx, hb, hy.eps, Some(p.kv_norm.data()));
    let q_raw = linear(&xn, n, &p.attn.q);
    let k_raw = linear(&cn, m, &p.attn.k);
    let v = linear(&cn, m, &p.attn.v);
    let (q, q_rinv) = qk_norm(&q_raw, hs, hy);
    let (k, k_rinv) = qk_norm(&k_raw, hs, hy);
    let ranges: Vec<Range<usize>> = word_of.iter().map(|&j| j..j + 1).collect();
    let spec = AttnSpec::new(heads, heads, hs, Mask::CrossSegments(ranges)).with_softcap(hy.softcap);
    let (a, cache) = attention_forward(&q, &k, &v, n, m, &spec)?;
    let o = linear(&a, n, &p.attn.o);
    let (on, ro) = rms_norm_rows(&o, hd, hy.eps, Some(p.post_norm.data()));
    let y = x.iter().zip(&on).map(|(&a, &b)| a + b).collect();
    Ok((
        y,
        CrossTape {
            n,
            m,
            x0: x.to_vec(),
            ctx: ctx.to_vec(),
            xn,
            rx,
            cn,
            rc,
            q_raw,
            k_raw,
            q_rinv,
            k_rinv,
            q,
            k,
            v,
            cache,
            spec,
            a,
            o,
            ro,
        },
    ))
}

#[derive(Clone, Debug)]
pub(crate) struct PoolTape<T> {
    pub nb: usize,
    pub nw: usize,
    pub states: Vec<T>,
    pub q_row: Vec<T>,
    pub q_rinv: Vec<T>,
    pub k_raw: Vec<T>,
    pub k_rinv: Vec<T>,
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    pub cache: AttnCache<T>,
    pub spec: AttnSpec,
    pub a: Vec<T>,
}

/// Learned-query pooling: each span's byte states collapse into one word
/// embedding of width `cross_hidden`.
pub(crate) fn pool_forward<T: Scalar>(
    p: &ConnectorParams<T>,
    c: &HatConfig,
    hy: &Hyper,
    states: &[T],
    spans: &[WordSpan],
) -> Result<(Vec<T>, PoolTape<T>)> {
    let he = c.encoder.hidden;
    let ch = c.connector.cross_hidden;
    let heads = c.connector.encoder_cross_heads;
    let hs = c.head_size_cross_encoder();
    let nb = states.len() / he;
    let nw = spans.len();
    let q_row = linear(p.query.data(), 1, &p.attn.q);
    let (q1, q_rinv) = qk_norm(&q_row, hs, hy);
    let q: Vec<T> = (0..nw).flat_map(|_| q1.iter().copied()).collect();
    let k_raw = linear(states, nb, &p.attn.k);
    let v = linear(states, nb, &p.attn.v);
    let (k, k_rinv) = qk_norm(&k_raw, hs, hy);
    let ranges = spans.iter().map(|s| s.range()).collect();
    let spec = AttnSpec::new(heads, heads, hs, Mask::CrossSegments(ranges)).with_softcap(hy.softcap);
    let (a, cache) = attention_forward(&q, &k, &v, nw, nb, &spec)?;
    let out = linear(&a, nw, &p.attn.o);
    debug_assert_eq!(out.len(), nw * ch);
    Ok((
        out,
        PoolTape {
            nb,
            nw,
            states: states.to_vec(),
            q_row,
            q_rinv,
            k_raw,
            k_rinv,
            q,
            k,
            v,
            cache,
            spec,
            a,
        },
    ))
}
