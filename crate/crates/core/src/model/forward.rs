use super::config::BYTE_VOCAB;
use super::layers::{block_forward, cross_forward, linear, pool_forward, BlockTape, CrossTape, Hyper, PoolTape};
use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::splitter::{Splitter, WordSpan};
use crate::tensor::{rms_norm_rows, Scalar, Tensor};

/// Begin-of-sequence byte, prepended to every model input. Never valid UTF-8.
pub const BOS_BYTE: u8 = 0xFE;
/// End-of-generation byte. Never valid UTF-8.
pub const EOS_BYTE: u8 = 0xFF;

/// Activations of a full teacher-forced pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// Encoder outputs, one row per model byte.
    pub byte_states: Tensor<T>,
    /// Pooled word embeddings, one row per word fed to the backbone.
    pub word_embeddings: Tensor<T>,
    /// Row `j` is the backbone output after BOS and words `0..j`: the
    /// context for bytes of word `j`.
    pub backbone_outputs: Tensor<T>,
    pub logits: Tensor<T>,
    pub spans: Vec<WordSpan>,
    pub word_index: Vec<usize>,
}

/// Everything the backward pass needs beyond the trace.
#[derive(Clone, Debug)]
pub(crate) struct Tape<T> {
    pub seq: Vec<u8>,
    pub enc: Vec<BlockTape<T>>,
    pub pool: PoolTape<T>,
    pub bb: Vec<BlockTape<T>>,
    pub cross: Vec<CrossTape<T>>,
    pub dec: Vec<BlockTape<T>>,
    pub final_in: Vec<T>,
    pub final_n: Vec<T>,
    pub final_r: Vec<T>,
}

/// Model-level word spans for `[BOS] + text (+ [EOS])`: the text's split
/// shifted by one, with the BOS byte joining the first word and EOS joining
/// the last. Empty text yields the single span holding BOS.
pub fn sequence_spans(splitter: &Splitter, text: &[u8], with_eos: bool) -> Result<Vec<WordSpan>> {
    let mut spans: Vec<WordSpan> = splitter.split(text)?.spans.iter().map(|s| s.shifted(1)).collect();
    match spans.first_mut() {
        Some(first) => first.start = 0,
        None => spans.push(WordSpan::new(0, 1)),
    }
    if with_eos {
        spans.last_mut().expect("non-empty").end += 1;
    }
    Ok(spans)
}

/// `[BOS] + text`.
pub fn sequence_bytes(text: &[u8]) -> Vec<u8> {
    let mut s = Vec::with_capacity(text.len() + 1);
    s.push(BOS_BYTE);
    s.extend_from_slice(text);
    s
}

pub fn word_index_from_spans(spans: &[WordSpan], n: usize) -> Vec<usize> {
    let mut idx = vec![0; n];
    for (j, s) in spans.iter().enumerate() {
        for i in s.range() {
            if i < n {
                idx[i] = j;
            }
        }
    }
    idx
}

pub(crate) fn encoder_stack<T: Scalar>(params: &ParamSet<T>, seq: &[u8]) -> Result<(Vec<T>, Vec<BlockTape<T>>)> {
    let c = &params.config;
    let hy = Hyper::of(c);
    let he = c.encoder.hidden;
    let mut x = Vec::with_capacity(seq.len() * he);
    for &b in seq {
        x.extend_from_slice(params.encoder.byte_embed.row(b as usize));
    }
    let mut tapes = Vec::with_capacity(c.encoder.n_layers);
    for layer in &params.encoder.layers {
        let (y, t) = block_forward(layer, &c.encoder, &hy, &x, seq.len(), 0, None)?;
        tapes.push(t);
        x = y;
    }
    Ok((x, tapes))
}

pub(crate) fn backbone_stack<T: Scalar>(params: &ParamSet<T>, words: &[T]) -> Result<(Vec<T>, Vec<BlockTape<T>>)> {
    let c = &params.config;
    let hy = Hyper::of(c);
    let mut x = params.backbone.bos.data().to_vec();
    x.extend_from_slice(words);
    let n = x.len() / c.backbone.hidden;
    let mut tapes = Vec::with_capacity(c.backbone.n_layers);
    for layer in &params.backbone.layers {
        let (y, t) = block_forward(layer, &c.backbone, &hy, &x, n, 0, None)?;
        tapes.push(t);
        x = y;
    }
    Ok((x, tapes))
}

#[allow(clippy::type_complexity)]
pub(crate) fn decoder_stack<T: Scalar>(
    params: &ParamSet<T>,
    states: &[T],
    ctx: &[T],
    word_index: &[usize],
) -> Result<(Vec<T>, Vec<CrossTape<T>>, Vec<BlockTape<T>>, Vec<T>, Vec<T>, Vec<T>)> {
    let c = &params.config;
    let hy = Hyper::of(c);
    let n = word_index.len();
    let mut x = states.to_vec();
    let mut crosses = Vec::with_capacity(c.decoder.n_layers);
    let mut blocks = Vec::with_capacity(c.decoder.n_layers);
    for layer in &params.decoder.layers {
        let (y, t) = cross_forward(&layer.cross, c, &hy, &x, n, ctx, word_index)?;
        crosses.push(t);
        let (y, t) = block_forward(&layer.block, &c.decoder, &hy, &y, n, 0, None)?;
        blocks.push(t);
        x = y;
    }
    let (fnorm, fr) = rms_norm_rows(&x, c.decoder.hidden, hy.eps, Some(params.decoder.final_norm.data()));
    let logits = linear(&fnorm, n, &params.decoder.lm_head);
    Ok((logits, crosses, blocks, x, fnorm, fr))
}

fn check_lengths<T: Scalar>(params: &ParamSet<T>, n_bytes: usize, n_backbone: usize) -> Result<()> {
    let c = &params.config;
    if n_bytes == 0 {
        return Err(Error::TooShort("model input needs at least one byte".into()));
    }
    if n_bytes > c.max_byte_positions {
        return Err(Error::TooLong {
            what: "byte positions",
            len: n_bytes,
            max: c.max_byte_positions,
        });
    }
    if n_backbone > c.max_word_positions {
        return Err(Error::TooLong {
            what: "word positions",
            len: n_backbone,
            max: c.max_word_positions,
        });
    }
    Ok(())
}

/// Full pass over a model byte sequence with an explicit word assignment.
///
/// `spans` are the closed words (in order, inside `seq`), and byte `i`
/// reads backbone row `word_index[i]`, which must not exceed `spans.len()`.
/// Only the words needed to produce the referenced rows enter the backbone.
pub(crate) fn forward_with_tape<T: Scalar>(
    params: &ParamSet<T>,
    seq: &[u8],
    spans: &[WordSpan],
    word_index: &[usize],
) -> Result<(ForwardTrace<T>, Tape<T>)> {
    let n = seq.len();
    if word_index.len() != n {
        return Err(Error::Shape(format!("{} word indices for {n} bytes", word_index.len())));
    }
    let rows = word_index.iter().copied().max().unwrap_or(0) + 1;
    if rows > spans.len() + 1 {
        return Err(Error::Invariant(format!(
            "byte reads backbone row {} but only {} words are closed",
            rows - 1,
            spans.len()
        )));
    }
    for (j, s) in spans.iter().enumerate() {
        if s.is_empty() || s.end > n || (j > 0 && s.start < spans[j - 1].end) {
            return Err(Error::Invariant(format!("bad span {j}: {s:?}")));
        }
    }
    check_lengths(params, n, rows)?;
    let c = &params.config;
    let (states, enc) = encoder_stack(params, seq)?;
    let used = &spans[..rows - 1];
    let (words, pool) = pool_forward(&params.connector, c, &Hyper::of(c), &states, used)?;
    let (bb_out, bb) = backbone_stack(params, &words)?;
    let (logits, cross, dec, final_in, final_n, final_r) = decoder_stack(params, &states, &bb_out, word_index)?;
    let he = c.encoder.hidden;
    let hb = c.backbone.hidden;
    let trace = ForwardTrace {
        byte_states: Tensor::matrix(n, he, states)?,
        word_embeddings: Tensor::matrix(rows - 1, hb, words)?,
        backbone_outputs: Tensor::matrix(rows, hb, bb_out)?,
        logits: Tensor::matrix(n, BYTE_VOCAB, logits)?,
        spans: spans.to_vec(),
        word_index: word_index.to_vec(),
    };
    let tape = Tape {
        seq: seq.to_vec(),
        enc,
        pool,
        bb,
        cross,
        dec,
        final_in,
        final_n,
        final_r,
    };
    Ok((trace, tape))
}

/// Full pass over `[BOS] + text` using the batch splitter's words.
pub fn forward<T: Scalar>(params: &ParamSet<T>, text: &[u8]) -> Result<ForwardTrace<T>> {
    Ok(forward_text_with_tape(params, text)?.0)
}

pub(crate) fn forward_text_with_tape<T: Scalar>(params: &ParamSet<T>, text: &[u8]) -> Result<(ForwardTrace<T>, Tape<T>)> {
    let splitter = Splitter::new(params.config.max_word_bytes)?;
    let spans = sequence_spans(&splitter, text, false)?;
    let seq = sequence_bytes(text);
    let idx = word_index_from_spans(&spans, seq.len());
    forward_with_tape(params, &seq, &spans, &idx)
}

/// Full pass over a model byte sequence with a caller-supplied assignment
/// (see [`forward_with_tape`] for the contract).
pub fn forward_assigned<T: Scalar>(
    params: &ParamSet<T>,
    seq: &[u8],
    spans: &[WordSpan],
    word_index: &[usize],
) -> Result<ForwardTrace<T>> {
    Ok(forward_with_tape(params, seq, spans, word_index)?.0)
}

/// Encoder byte states for raw bytes (no sentinel added).
pub fn encode_bytes<T: Scalar>(params: &ParamSet<T>, bytes: &[u8]) -> Result<Tensor<T>> {
    check_lengths(params, bytes.len(), 1)?;
    let (x, _) = encoder_stack(params, bytes)?;
    Tensor::matrix(bytes.len(), params.config.encoder.hidden, x)
}

/// One embedding per span, pooled from the span's byte states.
pub fn pool_words<T: Scalar>(params: &ParamSet<T>, byte_states: &Tensor<T>, spans: &[WordSpan]) -> Result<Tensor<T>> {
    let c = &params.config;
    if byte_states.cols() != c.encoder.hidden {
        return Err(Error::Shape(format!(
            "byte states have width {}, encoder hidden is {}",
            byte_states.cols(),
            c.encoder.hidden
        )));
    }
    for s in spans {
        if s.is_empty() || s.end > byte_states.rows() {
            return Err(Error::Invariant(format!("span {s:?} is empty or out of range")));
        }
    }
    let (w, _) = pool_forward(&params.connector, c, &Hyper::of(c), byte_states.data(), spans)?;
    Tensor::matrix(spans.len(), c.connector.cross_hidden, w)
}

/// Backbone over `[BOS] + words`; returns the `n` consumable rows (row `k`
/// predicts word `k`).
pub fn backbone_forward<T: Scalar>(params: &ParamSet<T>, word_embeddings: &Tensor<T>) -> Result<Tensor<T>> {
    let c = &params.config;
    let n = word_embeddings.rows();
    if n == 0 {
        return Err(Error::TooShort("backbone needs at least one word".into()));
    }
    if word_embeddings.cols() != c.backbone.hidden {
        return Err(Error::Shape("word embedding width differs from backbone hidden".into()));
    }
    check_lengths(params, 1, n)?;
    let hb = c.backbone.hidden;
    let (out, _) = backbone_stack(params, &word_embeddings.data()[..(n - 1) * hb])?;
    Tensor::matrix(n, hb, out)
}

/// Decoder logits; byte `i` reads `backbone_outputs` row `word_index[i]`.
pub fn decode_bytes<T: Scalar>(
    params: &ParamSet<T>,
    byte_states: &Tensor<T>,
    backbone_outputs: &Tensor<T>,
    word_index: &[usize],
) -> Result<Tensor<T>> {
    let c = &params.config;
    if word_index.len() != byte_states.rows() {
        return Err(Error::Shape(format!(
            "{} word indices for {} byte states",
            word_index.len(),
            byte_states.rows()
        )));
    }
    if byte_states.cols() != c.decoder.hidden || backbone_outputs.cols() != c.backbone.hidden {
        return Err(Error::Shape("decoder input widths do not match the config".into()));
    }
    if word_index.iter().any(|&j| j >= backbone_outputs.rows()) {
        return Err(Error::Invariant("word index beyond backbone outputs".into()));
    }
    let (logits, ..) = decoder_stack(params, byte_states.data(), backbone_outputs.data(), word_index)?;
    Tensor::matrix(word_index.len(), BYTE_VOCAB, logits)
}

/// Log-softmax of one logits row, in f64.
pub fn log_softmax<T: Scalar>(row: &[T]) -> Vec<f64> {
    let m = row.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|x| (x.as_f64() - m).exp()).sum();
    let lz = m + z.ln();
    row.iter().map(|x| x.as_f64() - lz).collect()
}

/// Mean next-byte cross-entropy of a trace: position `i` predicts `seq[i+1]`.
pub fn trace_loss<T: Scalar>(trace: &ForwardTrace<T>, seq: &[u8]) -> Result<f64> {
    if seq.len() < 2 {
        return Err(Error::TooShort("loss needs at least two model bytes".into()));
    }
    let mut total = 0.0;
    for i in 0..seq.len() - 1 {
        total -= log_softmax(trace.logits.row(i))[seq[i + 1] as usize];
    }
    Ok(total / (seq.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, HatConfig};

    #[test]
    fn sentinel_spans() {
        let sp = Splitter::default();
        assert_eq!(sequence_spans(&sp, b"", false).unwrap(), [WordSpan::new(0, 1)]);
        assert_eq!(
            sequence_spans(&sp, b"FooBar", true).unwrap(),
            [WordSpan::new(0, 4), WordSpan::new(4, 8)]
        );
    }

    #[test]
    fn shapes_and_initial_loss() {
        let p = init_params::<f32>(&HatConfig::micro(), 1);
        let text = b"Hello, world! FooBar a+b";
        let t = forward(&p, text).unwrap();
        let n = text.len() + 1;
        assert_eq!(t.byte_states.shape(), [n, 16]);
        assert_eq!(t.logits.shape(), [n, 256]);
        assert_eq!(t.backbone_outputs.rows(), t.spans.len());
        assert_eq!(t.word_embeddings.rows(), t.spans.len() - 1);
        let loss = trace_loss(&t, &sequence_bytes(text)).unwrap();
        assert!((loss - 256f64.ln()).abs() < 0.5, "{loss}");
    }

    #[test]
    fn public_pieces_compose_to_forward() {
        let p = init_params::<f64>(&HatConfig::micro(), 2);
        let text = b"one two three";
        let t = forward(&p, text).unwrap();
        let seq = sequence_bytes(text);
        let states = encode_bytes(&p, &seq).unwrap();
        assert_eq!(states, t.byte_states);
        let words = pool_words(&p, &states, &t.spans).unwrap();
        assert_eq!(words.slice_rows(0..t.spans.len() - 1), t.word_embeddings);
        let bb = backbone_forward(&p, &words).unwrap();
        assert_eq!(bb, t.backbone_outputs);
        let logits = decode_bytes(&p, &states, &bb, &t.word_index).unwrap();
        assert_eq!(logits, t.logits);
    }
}
