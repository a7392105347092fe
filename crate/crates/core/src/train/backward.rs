//! Reverse-mode gradients of the full forward pass, layer by layer.

use crate::error::{Error, Result};
use crate::model::layers::{BlockTape, CrossTape, Hyper, PoolTape};
use crate::model::{
    forward_text_with_tape, forward_with_tape, BlockParams, ConnectorParams, CrossParams, ForwardTrace, HatConfig,
    ParamSet, StackConfig, Tape, BYTE_VOCAB,
};
use crate::splitter::WordSpan;
use crate::tensor::{attention_backward, matmul_acc_at, matmul_bt, rms_norm_backward, rope_rotate, swiglu_backward, Scalar};

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn qk_back<T: Scalar>(raw: &[T], rinv: &[T], head: usize, hy: &Hyper, d: Vec<T>) -> Vec<T> {
    if hy.qk_norm {
        rms_norm_backward(raw, rinv, head, None, &d, None)
    } else {
        d
    }
}

/// `y = x·W` backward: accumulates `xᵀ·dy` into `dw` and returns `dy·Wᵀ`.
fn linear_back<T: Scalar>(x: &[T], n: usize, w: &[T], k: usize, m: usize, dy: &[T], dw: &mut [T]) -> Vec<T> {
    matmul_acc_at(x, dy, n, k, m, dw);
    matmul_bt(dy, w, n, m, k)
}

fn block_backward<T: Scalar>(
    p: &BlockParams<T>,
    s: &StackConfig,
    hy: &Hyper,
    t: &BlockTape<T>,
    dy: &[T],
    g: &mut BlockParams<T>,
) -> Vec<T> {
    let (n, h, hs) = (t.n, s.hidden, s.head_size);
    let (qd, kvd, inter) = (s.q_dim(), s.kv_dim(), s.intermediate());
    let dn2 = swiglu_backward(
        &t.n2,
        n,
        h,
        inter,
        p.mlp.gate.data(),
        p.mlp.up.data(),
        p.mlp.down.data(),
        &t.mlp,
        dy,
        g.mlp.gate.data_mut(),
        g.mlp.up.data_mut(),
        g.mlp.down.data_mut(),
    );
    let mut dx1 = rms_norm_backward(&t.x1, &t.r2, h, Some(p.mlp_norm.data()), &dn2, Some(g.mlp_norm.data_mut()));
    add_into(&mut dx1, dy);

    let a = &t.attn;
    let da = linear_back(&a.a, n, p.attn.o.data(), qd, h, &dx1, g.attn.o.data_mut());
    let (mut dq, mut dk, dv) = attention_backward(&a.qr, &a.kr, &a.v, n, n, &a.spec, &a.cache, &da);
    for (i, row) in dq.chunks_exact_mut(qd).enumerate() {
        rope_rotate(row, t.pos0 + i, s.rope_base, hs, -1.0);
    }
    for (i, row) in dk.chunks_exact_mut(kvd).enumerate() {
        rope_rotate(row, t.pos0 + i, s.rope_base, hs, -1.0);
    }
    let dq = qk_back(&a.q_raw, &a.q_rinv, hs, hy, dq);
    let dk = qk_back(&a.k_raw, &a.k_rinv, hs, hy, dk);
    let mut dn1 = linear_back(&a.n1, n, p.attn.q.data(), h, qd, &dq, g.attn.q.data_mut());
    add_into(&mut dn1, &linear_back(&a.n1, n, p.attn.k.data(), h, kvd, &dk, g.attn.k.data_mut()));
    add_into(&mut dn1, &linear_back(&a.n1, n, p.attn.v.data(), h, kvd, &dv, g.attn.v.data_mut()));
    let mut dx0 = rms_norm_backward(&t.x0, &a.r1, h, Some(p.attn_norm.data()), &dn1, Some(g.attn_norm.data_mut()));
    add_into(&mut dx0, &dx1);
    dx0
}

fn cross_backward<T: Scalar>(
    p: &CrossParams<T>,
    c: &HatConfig,
    hy: &Hyper,
    t: &CrossTape<T>,
    dy: &[T],
    g: &mut CrossParams<T>,
    dctx: &mut [T],
) -> Vec<T> {
    let (n, m) = (t.n, t.m);
    let hd = c.decoder.hidden;
    let hb = c.backbone.hidden;
    let hs = c.head_size_cross_decoder();
    let d_o = rms_norm_backward(&t.o, &t.ro, hd, Some(p.post_norm.data()), dy, Some(g.post_norm.data_mut()));
    let da = linear_back(&t.a, n, p.attn.o.data(), hd, hd, &d_o, g.attn.o.data_mut());
    let (dq, dk, dv) = attention_backward(&t.q, &t.k, &t.v, n, m, &t.spec, &t.cache, &da);
    let dq = qk_back(&t.q_raw, &t.q_rinv, hs, hy, dq);
    let dk = qk_back(&t.k_raw, &t.k_rinv, hs, hy, dk);
    let dxn = linear_back(&t.xn, n, p.attn.q.data(), hd, hd, &dq, g.attn.q.data_mut());
    let mut dcn = linear_back(&t.cn, m, p.attn.k.data(), hb, hd, &dk, g.attn.k.data_mut());
    add_into(&mut dcn, &linear_back(&t.cn, m, p.attn.v.data(), hb, hd, &dv, g.attn.v.data_mut()));
    let dc = rms_norm_backward(&t.ctx, &t.rc, hb, Some(p.kv_norm.data()), &dcn, Some(g.kv_norm.data_mut()));
    add_into(dctx, &dc);
    let mut dx = rms_norm_backward(&t.x0, &t.rx, hd, Some(p.pre_norm.data()), &dxn, Some(g.pre_norm.data_mut()));
    add_into(&mut dx, dy);
    dx
}

fn pool_backward<T: Scalar>(
    p: &ConnectorParams<T>,
    c: &HatConfig,
    hy: &Hyper,
    t: &PoolTape<T>,
    dwords: &[T],
    g: &mut ConnectorParams<T>,
    dstates: &mut [T],
) {
    let (nb, nw) = (t.nb, t.nw);
    if nw == 0 {
        return;
    }
    let he = c.encoder.hidden;
    let ch = c.connector.cross_hidden;
    let hs = c.head_size_cross_encoder();
    let da = linear_back(&t.a, nw, p.attn.o.data(), ch, ch, dwords, g.attn.o.data_mut());
    let (dq, dk, dv) = attention_backward(&t.q, &t.k, &t.v, nw, nb, &t.spec, &t.cache, &da);
    let mut dq1 = vec![T::zero(); ch];
    for row in dq.chunks_exact(ch) {
        add_into(&mut dq1, row);
    }
    let dq_row = qk_back(&t.q_row, &t.q_rinv, hs, hy, dq1);
    let dquery = linear_back(p.query.data(), 1, p.attn.q.data(), ch, ch, &dq_row, g.attn.q.data_mut());
    add_into(g.query.data_mut(), &dquery);
    let dk = qk_back(&t.k_raw, &t.k_rinv, hs, hy, dk);
    let mut ds = linear_back(&t.states, nb, p.attn.k.data(), he, ch, &dk, g.attn.k.data_mut());
    add_into(&mut ds, &linear_back(&t.states, nb, p.attn.v.data(), he, ch, &dv, g.attn.v.data_mut()));
    add_into(dstates, &ds);
}

/// Gradients of every parameter given `dlogits` for a recorded pass.
pub(crate) fn backward_from_logits<T: Scalar>(params: &ParamSet<T>, tape: &Tape<T>, dlogits: &[T]) -> ParamSet<T> {
    let c = &params.config;
    let hy = Hyper::of(c);
    let mut g = params.zeros_like();
    let n = tape.seq.len();
    let (he, hb, hd) = (c.encoder.hidden, c.backbone.hidden, c.decoder.hidden);

    let dfinal = linear_back(
        &tape.final_n,
        n,
        params.decoder.lm_head.data(),
        hd,
        BYTE_VOCAB,
        dlogits,
        g.decoder.lm_head.data_mut(),
    );
    let mut dx = rms_norm_backward(
        &tape.final_in,
        &tape.final_r,
        hd,
        Some(params.decoder.final_norm.data()),
        &dfinal,
        Some(g.decoder.final_norm.data_mut()),
    );

    let rows = tape.bb.first().map_or(1, |t| t.n);
    let mut dctx = vec![T::zero(); rows * hb];
    for l in (0..c.decoder.n_layers).rev() {
        let pl = &params.decoder.layers[l];
        let gl = &mut g.decoder.layers[l];
        dx = block_backward(&pl.block, &c.decoder, &hy, &tape.dec[l], &dx, &mut gl.block);
        dx = cross_backward(&pl.cross, c, &hy, &tape.cross[l], &dx, &mut gl.cross, &mut dctx);
    }
    let mut dstates = dx;

    let mut dbb = dctx;
    for l in (0..c.backbone.n_layers).rev() {
        dbb = block_backward(
            &params.backbone.layers[l],
            &c.backbone,
            &hy,
            &tape.bb[l],
            &dbb,
            &mut g.backbone.layers[l],
        );
    }
    add_into(g.backbone.bos.data_mut(), &dbb[..hb]);
    pool_backward(&params.connector, c, &hy, &tape.pool, &dbb[hb..], &mut g.connector, &mut dstates);

    let mut de = dstates;
    for l in (0..c.encoder.n_layers).rev() {
        de = block_backward(
            &params.encoder.layers[l],
            &c.encoder,
            &hy,
            &tape.enc[l],
            &de,
            &mut g.encoder.layers[l],
        );
    }
    for (i, &b) in tape.seq.iter().enumerate() {
        add_into(g.encoder.byte_embed.row_mut(b as usize), &de[i * he..(i + 1) * he]);
    }
    g
}

/// Mean cross-entropy (position `i` predicts byte `i+1`) and its gradient
/// with respect to the logits.
pub(crate) fn ce_loss_grad<T: Scalar>(trace: &ForwardTrace<T>, seq: &[u8]) -> Result<(f64, Vec<T>)> {
    let n = seq.len();
    if n < 2 {
        return Err(Error::TooShort("loss needs at least two model bytes".into()));
    }
    let count = (n - 1) as f64;
    let mut dlogits = vec![T::zero(); n * BYTE_VOCAB];
    let mut total = 0.0;
    for i in 0..n - 1 {
        let lp = crate::model::log_softmax(trace.logits.row(i));
        let target = seq[i + 1] as usize;
        total -= lp[target];
        let row = &mut dlogits[i * BYTE_VOCAB..(i + 1) * BYTE_VOCAB];
        for (v, d) in row.iter_mut().enumerate() {
            let p = lp[v].exp() - if v == target { 1.0 } else { 0.0 };
            *d = T::of(p / count);
        }
    }
    Ok((total / count, dlogits))
}

/// Loss and gradients for `[BOS] + text` with the batch splitter's words.
pub fn loss_and_grad<T: Scalar>(params: &ParamSet<T>, text: &[u8]) -> Result<(f64, ParamSet<T>)> {
    let (trace, tape) = forward_text_with_tape(params, text)?;
    let (loss, dl) = ce_loss_grad(&trace, &tape.seq)?;
    Ok((loss, backward_from_logits(params, &tape, &dl)))
}

/// Gradients only; see [`loss_and_grad`].
pub fn backward<T: Scalar>(params: &ParamSet<T>, text: &[u8]) -> Result<ParamSet<T>> {
    Ok(loss_and_grad(params, text)?.1)
}

/// Loss and gradients for an explicit model sequence and word assignment.
pub fn loss_and_grad_assigned<T: Scalar>(
    params: &ParamSet<T>,
    seq: &[u8],
    spans: &[WordSpan],
    word_index: &[usize],
) -> Result<(f64, ParamSet<T>)> {
    let (trace, tape) = forward_with_tape(params, seq, spans, word_index)?;
    let (loss, dl) = ce_loss_grad(&trace, seq)?;
    Ok((loss, backward_from_logits(params, &tape, &dl)))
}

/// Mean next-byte cross-entropy over `[BOS] + text`.
pub fn loss<T: Scalar>(params: &ParamSet<T>, text: &[u8]) -> Result<f64> {
    if text.is_empty() {
        return Err(Error::TooShort("loss needs at least one text byte after BOS".into()));
    }
    let trace = crate::model::forward(params, text)?;
    crate::model::trace_loss(&trace, &crate::model::sequence_bytes(text))
}
