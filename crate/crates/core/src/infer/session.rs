//! One generation stream with its byte and word caches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::assign::{model_span, push_all};
use super::cache::{ByteCache, CacheReport, WordCache};
use crate::error::{Error, Result};
use crate::model::layers::{block_step, cross_forward, linear, pool_forward, Hyper, KvView, Segment};
use crate::model::{forward_with_tape, sequence_bytes, HatConfig, ParamSet, BOS_BYTE, EOS_BYTE};
use crate::splitter::{validate_utf8, IncrementalSplitter, Splitter, WordSpan};
use crate::tensor::{rms_norm_rows, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    /// Argmax; ties go to the lower byte value.
    Greedy,
    Temperature { temperature: f64, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenConfig {
    pub sampling: Sampling,
    /// Generated-byte budget (the end sentinel is not counted).
    pub max_new_bytes: usize,
}

impl GenConfig {
    pub fn greedy(max_new_bytes: usize) -> Self {
        Self {
            sampling: Sampling::Greedy,
            max_new_bytes,
        }
    }

    /// `4 · max_word_positions × 8` bytes.
    pub fn default_budget(c: &HatConfig) -> usize {
        4 * c.max_word_positions * 8
    }

    pub fn validate(&self) -> Result<()> {
        if let Sampling::Temperature { temperature, .. } = self.sampling {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    /// Waiting for its prompt.
    Prefilling,
    /// Next-byte logits are ready; the next action is a byte step.
    MidWord,
    /// The last byte closed a word the backbone has not consumed yet.
    AtBoundary,
    Finished,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FinishReason {
    EndSentinel,
    Budget,
    Failed(String),
}

/// Result of [`GenSession::step_byte`].
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub byte: u8,
    /// Words (model coordinates) closed by this byte and consumed by the
    /// backbone within the same step.
    pub closed: Vec<WordSpan>,
    pub status: Status,
}

/// A generation stream. Byte `i` of the model sequence (`[BOS] + prompt +
/// generated`) was decoded against backbone row `word_index()[i]`, the
/// number of words closed once it arrived.
#[derive(Clone, Debug)]
pub struct GenSession<T> {
    id: usize,
    config: HatConfig,
    gen: GenConfig,
    rng: ChaCha8Rng,
    status: Status,
    finish: Option<FinishReason>,
    seq: Vec<u8>,
    prompt_len: usize,
    splitter: IncrementalSplitter,
    closed: Vec<WordSpan>,
    consumed: usize,
    word_index: Vec<usize>,
    byte_cache: ByteCache<T>,
    word_cache: WordCache<T>,
    /// Encoder outputs from the start of the oldest unconsumed word.
    states: Vec<T>,
    states_start: usize,
    ctx: Vec<T>,
    logits: Vec<T>,
    digest: u64,
    pub(crate) wait_ticks: usize,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0100_0000_01b3;

fn utf8_width(lead: u8) -> usize {
    match lead {
        0xC0..=0xDF => 2,
        0xE0..=0xEF => 3,
        0xF0..=0xF7 => 4,
        _ => 1,
    }
}

/// Whether `b` may follow the incomplete code point `partial` with
/// `remaining` budget bytes left (including `b`): output stays valid UTF-8,
/// never contains BOS, and EOS only appears between code points.
fn byte_allowed(partial: &[u8], b: u8, remaining: usize) -> bool {
    match b {
        BOS_BYTE => false,
        EOS_BYTE => partial.is_empty(),
        _ => {
            let mut buf = [0u8; 4];
            buf[..partial.len()].copy_from_slice(partial);
            buf[partial.len()] = b;
            let s = &buf[..=partial.len()];
            match std::str::from_utf8(s) {
                Ok(_) => true,
                Err(e) if e.error_len().is_none() => utf8_width(s[0]) - s.len() < remaining,
                Err(_) => false,
            }
        }
    }
}

/// Highest logit among `allowed` (ascending); ties keep the lower byte.
pub(crate) fn greedy_pick<T: Scalar>(logits: &[T], allowed: &[u8]) -> Option<u8> {
    let mut best: Option<(u8, T)> = None;
    for &b in allowed {
        let l = logits[b as usize];
        match best {
            Some((_, m)) if l <= m => {}
            _ => best = Some((b, l)),
        }
    }
    best.map(|(b, _)| b)
}

impl<T: Scalar> GenSession<T> {
    pub fn new(id: usize, params: &ParamSet<T>, gen: GenConfig) -> Result<Self> {
        gen.validate()?;
        let c = &params.config;
        let seed = match gen.sampling {
            Sampling::Temperature { seed, .. } => seed,
            Sampling::Greedy => 0,
        };
        Ok(Self {
            id,
            config: c.clone(),
            gen,
            rng: ChaCha8Rng::seed_from_u64(seed),
            status: Status::Prefilling,
            finish: None,
            seq: Vec::new(),
            prompt_len: 0,
            splitter: Splitter::new(c.max_word_bytes)?.incremental(),
            closed: Vec::new(),
            consumed: 0,
            word_index: Vec::new(),
            byte_cache: ByteCache::new(c),
            word_cache: WordCache::new(c),
            states: Vec::new(),
            states_start: 0,
            ctx: Vec::new(),
            logits: Vec::new(),
            digest: FNV_OFFSET,
            wait_ticks: 0,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn finish_reason(&self) -> Option<&FinishReason> {
        self.finish.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.status == Status::Finished
    }

    /// `[BOS] + prompt + generated` (the end sentinel is never appended).
    pub fn model_bytes(&self) -> &[u8] {
        &self.seq
    }

    pub fn prompt(&self) -> &[u8] {
        self.seq.get(1..self.prompt_len).unwrap_or(&[])
    }

    pub fn generated(&self) -> &[u8] {
        &self.seq[self.prompt_len..]
    }

    /// Closed words in model coordinates, including any not yet consumed.
    pub fn closed_words(&self) -> &[WordSpan] {
        &self.closed
    }

    pub fn word_index(&self) -> &[usize] {
        &self.word_index
    }

    /// Next-byte logits, available while the status is `MidWord` (and kept
    /// after the session finishes by budget).
    pub fn logits(&self) -> Option<&[T]> {
        match self.status {
            Status::MidWord => Some(&self.logits),
            Status::Finished if self.finish == Some(FinishReason::Budget) => Some(&self.logits),
            _ => None,
        }
    }

    /// Backbone output the decoder currently reads.
    pub fn context(&self) -> &[T] {
        &self.ctx
    }

    /// Backbone positions consumed so far, BOS included.
    pub fn backbone_positions(&self) -> usize {
        self.word_cache.rows()
    }

    pub fn byte_cache(&self) -> &ByteCache<T> {
        &self.byte_cache
    }

    pub fn word_cache(&self) -> &WordCache<T> {
        &self.word_cache
    }

    /// FNV-1a over the bits of every logits row decoded so far.
    pub fn logits_digest(&self) -> u64 {
        self.digest
    }

    pub fn cache_report(&self) -> CacheReport {
        CacheReport::of(
            &self.config,
            self.byte_cache.rows(),
            self.word_cache.rows(),
            std::mem::size_of::<T>(),
        )
    }

    pub(crate) fn pending_words(&self) -> usize {
        self.closed.len() - self.consumed
    }

    pub(crate) fn fail(&mut self, e: &Error) {
        self.status = Status::Finished;
        self.finish = Some(FinishReason::Failed(e.to_string()));
    }

    fn record_logits(&mut self, row: &[T]) {
        self.logits.clear();
        self.logits.extend_from_slice(row);
        for x in row {
            for b in x.as_f64().to_bits().to_le_bytes() {
                self.digest = (self.digest ^ b as u64).wrapping_mul(FNV_PRIME);
            }
        }
    }

    /// Runs the whole prompt through the model and fills both caches.
    pub fn prefill(&mut self, params: &ParamSet<T>, prompt: &[u8]) -> Result<()> {
        if self.status != Status::Prefilling {
            return Err(Error::Invariant(format!("session {} is already prefilled", self.id)));
        }
        let r = self.prefill_inner(params, prompt);
        if let Err(e) = &r {
            self.fail(e);
        }
        r
    }

    fn prefill_inner(&mut self, params: &ParamSet<T>, prompt: &[u8]) -> Result<()> {
        validate_utf8(prompt)?;
        let c = &params.config;
        let seq = sequence_bytes(prompt);
        if seq.len() > c.max_byte_positions {
            return Err(Error::TooLong {
                what: "prompt byte positions",
                len: seq.len(),
                max: c.max_byte_positions,
            });
        }
        let mut closed = Vec::new();
        let mut index = vec![0];
        push_all(&mut self.splitter, prompt, &mut closed, &mut index)?;
        let (trace, tape) = forward_with_tape(params, &seq, &closed, &index)?;
        for (ring, t) in self.byte_cache.encoder.iter_mut().zip(&tape.enc) {
            ring.extend(&t.attn.kr, &t.attn.v, 0);
        }
        for (ring, t) in self.byte_cache.decoder.iter_mut().zip(&tape.dec) {
            ring.extend(&t.attn.kr, &t.attn.v, 0);
        }
        for (store, t) in self.word_cache.layers.iter_mut().zip(&tape.bb) {
            store.extend(&t.attn.kr, &t.attn.v);
        }
        let n = seq.len();
        let he = c.encoder.hidden;
        self.states_start = closed.last().map_or(0, |s| s.end);
        self.states = trace.byte_states.data()[self.states_start * he..].to_vec();
        let rows = trace.backbone_outputs.rows();
        self.ctx = trace.backbone_outputs.row(rows - 1).to_vec();
        self.record_logits(trace.logits.row(n - 1));
        self.consumed = closed.len();
        self.closed = closed;
        self.word_index = index;
        self.prompt_len = n;
        self.seq = seq;
        self.status = Status::MidWord;
        self.check_budget();
        Ok(())
    }

    fn check_budget(&mut self) {
        if self.generated().len() >= self.gen.max_new_bytes {
            self.status = Status::Finished;
            self.finish = Some(FinishReason::Budget);
        }
    }

    /// Bytes the sampler may emit next.
    pub(crate) fn admissible(&self) -> Vec<u8> {
        let partial = self.splitter.partial_codepoint();
        let remaining = self.gen.max_new_bytes - self.generated().len();
        (0..=255u8).filter(|&b| byte_allowed(partial, b, remaining)).collect()
    }

    fn sample(&mut self) -> Result<u8> {
        let allowed = self.admissible();
        let pick = match self.gen.sampling {
            Sampling::Greedy => greedy_pick(&self.logits, &allowed),
            Sampling::Temperature { temperature, .. } => {
                let logit = |b: u8| self.logits[b as usize].as_f64();
                let m = allowed.iter().map(|&b| logit(b)).fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = allowed.iter().map(|&b| ((logit(b) - m) / temperature).exp()).collect();
                let total: f64 = w.iter().sum();
                let mut u = self.rng.gen::<f64>() * total;
                let mut pick = allowed.last().copied();
                for (&b, &wi) in allowed.iter().zip(&w) {
                    if u < wi {
                        pick = Some(b);
                        break;
                    }
                    u -= wi;
                }
                pick
            }
        };
        pick.ok_or_else(|| Error::Invariant("no admissible next byte".into()))
    }

    /// Samples the next byte. EOS finishes the session; any other byte is
    /// appended and awaits [`encode_step`].
    pub(crate) fn sample_and_append(&mut self) -> Result<u8> {
        if self.status != Status::MidWord {
            return Err(match self.status {
                Status::Finished => Error::Finished,
                s => Error::Invariant(format!("byte step in state {s:?}")),
            });
        }
        let b = self.sample()?;
        if b == EOS_BYTE {
            self.status = Status::Finished;
            self.finish = Some(FinishReason::EndSentinel);
            return Ok(b);
        }
        if self.seq.len() >= self.config.max_byte_positions {
            return Err(Error::Capacity(format!(
                "byte position {} reaches the limit of {}",
                self.seq.len(),
                self.config.max_byte_positions
            )));
        }
        self.seq.push(b);
        Ok(b)
    }

    pub(crate) fn check_word_capacity(&self) -> Result<()> {
        let need = self.word_cache.rows() + self.pending_words();
        if need > self.config.max_word_positions {
            return Err(Error::Capacity(format!(
                "word cache needs {need} positions, limit is {}",
                self.config.max_word_positions
            )));
        }
        Ok(())
    }

    /// One generated byte: byte-level pass, and when a word closes, the
    /// backbone step and the decoder pass against the new context.
    pub fn step_byte(&mut self, params: &ParamSet<T>) -> Result<StepOutcome> {
        match self.status {
            Status::MidWord => {}
            Status::Finished => return Err(Error::Finished),
            s => return Err(Error::Invariant(format!("byte step in state {s:?}"))),
        }
        let r = self.step_byte_inner(params);
        if let Err(e) = &r {
            self.fail(e);
        }
        r
    }

    fn step_byte_inner(&mut self, params: &ParamSet<T>) -> Result<StepOutcome> {
        let byte = self.sample_and_append()?;
        if byte == EOS_BYTE {
            return Ok(StepOutcome {
                byte,
                closed: Vec::new(),
                status: self.status,
            });
        }
        encode_step(params, &mut [&mut *self])?;
        let closed = self.closed[self.consumed..].to_vec();
        if !closed.is_empty() {
            self.check_word_capacity()?;
            word_step(params, &mut [&mut *self])?;
        }
        decode_step(params, &mut [&mut *self])?;
        Ok(StepOutcome {
            byte,
            closed,
            status: self.status,
        })
    }
}

/// Generates from `prompt` until EOS or the budget; failures are returned.
pub fn generate<T: Scalar>(params: &ParamSet<T>, prompt: &[u8], gen: GenConfig) -> Result<GenSession<T>> {
    let mut s = GenSession::new(0, params, gen)?;
    s.prefill(params, prompt)?;
    while !s.is_finished() {
        s.step_byte(params)?;
    }
    Ok(s)
}

/// Encoder pass for the newest byte of every session, then the splitter
/// push. Sessions whose byte closes a word move to `AtBoundary`.
pub(crate) fn encode_step<T: Scalar>(params: &ParamSet<T>, ss: &mut [&mut GenSession<T>]) -> Result<()> {
    if ss.is_empty() {
        return Ok(());
    }
    let c = &params.config;
    let hy = Hyper::of(c);
    let he = c.encoder.hidden;
    let mut x = Vec::with_capacity(ss.len() * he);
    for s in ss.iter() {
        x.extend_from_slice(params.encoder.byte_embed.row(*s.seq.last().expect("byte appended") as usize));
    }
    for (l, layer) in params.encoder.layers.iter().enumerate() {
        let views: Vec<_> = ss.iter().map(|s| s.byte_cache.encoder[l].linearize()).collect();
        let segments: Vec<_> = ss
            .iter()
            .zip(&views)
            .map(|(s, (k, v))| Segment {
                n: 1,
                pos0: s.seq.len() - 1,
                past: Some(KvView {
                    k,
                    v,
                    pos0: s.byte_cache.encoder[l].start(),
                }),
            })
            .collect();
        let (y, kv) = block_step(layer, &c.encoder, &hy, &x, &segments)?;
        drop(segments);
        for (s, (k, v)) in ss.iter_mut().zip(kv) {
            s.byte_cache.encoder[l].push(&k, &v);
        }
        x = y;
    }
    for (i, s) in ss.iter_mut().enumerate() {
        s.states.extend_from_slice(&x[i * he..(i + 1) * he]);
        let b = *s.seq.last().unwrap();
        for ev in s.splitter.push_byte(b)? {
            let first = s.closed.is_empty();
            s.closed.push(model_span(ev.span, first));
        }
        s.status = if s.pending_words() > 0 {
            Status::AtBoundary
        } else {
            Status::MidWord
        };
    }
    Ok(())
}

/// Pools every pending word and advances the backbone over them, one
/// segment per session. The context row becomes the last output.
pub(crate) fn word_step<T: Scalar>(params: &ParamSet<T>, ss: &mut [&mut GenSession<T>]) -> Result<()> {
    if ss.is_empty() {
        return Ok(());
    }
    let c = &params.config;
    let hy = Hyper::of(c);
    let (he, hb) = (c.encoder.hidden, c.backbone.hidden);
    let mut states = Vec::new();
    let mut spans = Vec::new();
    let mut counts = Vec::with_capacity(ss.len());
    for s in ss.iter() {
        let off = states.len() / he;
        for sp in &s.closed[s.consumed..] {
            spans.push(WordSpan::new(sp.start - s.states_start + off, sp.end - s.states_start + off));
        }
        states.extend_from_slice(&s.states);
        counts.push(s.pending_words());
    }
    if counts.contains(&0) {
        return Err(Error::Invariant("word step without a closed word".into()));
    }
    let (mut x, _) = pool_forward(&params.connector, c, &hy, &states, &spans)?;
    let pos0: Vec<usize> = ss.iter().map(|s| s.word_cache.rows()).collect();
    for (l, layer) in params.backbone.layers.iter().enumerate() {
        let segments: Vec<_> = ss
            .iter()
            .zip(&counts)
            .zip(&pos0)
            .map(|((s, &n), &p)| Segment {
                n,
                pos0: p,
                past: Some(KvView {
                    k: s.word_cache.layers[l].keys(),
                    v: s.word_cache.layers[l].values(),
                    pos0: 0,
                }),
            })
            .collect();
        let (y, kv) = block_step(layer, &c.backbone, &hy, &x, &segments)?;
        drop(segments);
        for (s, (k, v)) in ss.iter_mut().zip(kv) {
            s.word_cache.layers[l].extend(&k, &v);
        }
        x = y;
    }
    let mut row = 0;
    for (s, &n) in ss.iter_mut().zip(&counts) {
        row += n;
        s.ctx = x[(row - 1) * hb..row * hb].to_vec();
        s.consumed = s.closed.len();
        let start = s.closed.last().expect("pending word").end;
        s.states.drain(..(start - s.states_start) * he);
        s.states_start = start;
        s.wait_ticks = 0;
    }
    Ok(())
}

/// Decoder pass for the newest byte of every session against its current
/// context row; stores the next-byte logits.
pub(crate) fn decode_step<T: Scalar>(params: &ParamSet<T>, ss: &mut [&mut GenSession<T>]) -> Result<()> {
    if ss.is_empty() {
        return Ok(());
    }
    let c = &params.config;
    let hy = Hyper::of(c);
    let hd = c.decoder.hidden;
    let n = ss.len();
    let mut x = Vec::with_capacity(n * hd);
    let mut ctx = Vec::with_capacity(n * c.backbone.hidden);
    for s in ss.iter() {
        if s.pending_words() > 0 {
            return Err(Error::Invariant("decode before the closed word reached the backbone".into()));
        }
        x.extend_from_slice(&s.states[s.states.len() - hd..]);
        ctx.extend_from_slice(&s.ctx);
    }
    let word_of: Vec<usize> = (0..n).collect();
    for (l, layer) in params.decoder.layers.iter().enumerate() {
        let (y, _) = cross_forward(&layer.cross, c, &hy, &x, n, &ctx, &word_of)?;
        let views: Vec<_> = ss.iter().map(|s| s.byte_cache.decoder[l].linearize()).collect();
        let segments: Vec<_> = ss
            .iter()
            .zip(&views)
            .map(|(s, (k, v))| Segment {
                n: 1,
                pos0: s.seq.len() - 1,
                past: Some(KvView {
                    k,
                    v,
                    pos0: s.byte_cache.decoder[l].start(),
                }),
            })
            .collect();
        let (y, kv) = block_step(&layer.block, &c.decoder, &hy, &y, &segments)?;
        drop(segments);
        for (s, (k, v)) in ss.iter_mut().zip(kv) {
            s.byte_cache.decoder[l].push(&k, &v);
        }
        x = y;
    }
    let (xn, _) = rms_norm_rows(&x, hd, hy.eps, Some(params.decoder.final_norm.data()));
    let logits = linear(&xn, n, &params.decoder.lm_head);
    let vocab = logits.len() / n;
    for (i, s) in ss.iter_mut().enumerate() {
        s.record_logits(&logits[i * vocab..(i + 1) * vocab]);
        s.word_index.push(s.consumed);
        s.status = Status::MidWord;
        s.check_budget();
    }
    Ok(())
}
