//! Dual KV caches: a window-capped ring per byte-level layer and an
//! append-only store per backbone layer. Keys are stored after RoPE.

use crate::model::HatConfig;
use crate::tensor::Scalar;

/// Fixed-capacity ring of key/value rows for one sliding-window layer.
#[derive(Clone, Debug)]
pub struct RingKv<T> {
    width: usize,
    cap: usize,
    k: Vec<T>,
    v: Vec<T>,
    head: usize,
    len: usize,
    /// Absolute position of the oldest stored row.
    pos0: usize,
}

impl<T: Scalar> RingKv<T> {
    pub fn new(width: usize, cap: usize) -> Self {
        assert!(cap > 0, "ring capacity must be positive");
        Self {
            width,
            cap,
            k: Vec::new(),
            v: Vec::new(),
            head: 0,
            len: 0,
            pos0: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    /// Absolute position of the oldest stored row.
    pub fn start(&self) -> usize {
        self.pos0
    }

    /// Absolute position the next pushed row will have.
    pub fn end(&self) -> usize {
        self.pos0 + self.len
    }

    /// Appends one row, overwriting the oldest when full.
    pub fn push(&mut self, k: &[T], v: &[T]) {
        debug_assert_eq!(k.len(), self.width);
        debug_assert_eq!(v.len(), self.width);
        if self.len < self.cap {
            // Storage grows until the ring first fills; `head` is still 0.
            self.k.extend_from_slice(k);
            self.v.extend_from_slice(v);
            self.len += 1;
            return;
        }
        let r = self.head * self.width..(self.head + 1) * self.width;
        self.k[r.clone()].copy_from_slice(k);
        self.v[r].copy_from_slice(v);
        self.head = (self.head + 1) % self.cap;
        self.pos0 += 1;
    }

    /// Appends rows of `k`/`v` whose first row sits at absolute position
    /// `pos0`; only the last `cap` can survive, so earlier ones are skipped.
    pub fn extend(&mut self, k: &[T], v: &[T], pos0: usize) {
        let n = k.len() / self.width;
        debug_assert!(self.is_empty() || self.end() == pos0);
        let skip = n.saturating_sub(self.cap);
        if skip > 0 {
            self.k.clear();
            self.v.clear();
            self.head = 0;
            self.len = 0;
        }
        if self.is_empty() {
            self.pos0 = pos0 + skip;
        }
        for i in skip..n {
            let r = i * self.width..(i + 1) * self.width;
            self.push(&k[r.clone()], &v[r]);
        }
    }

    /// Rows in chronological order.
    pub fn linearize(&self) -> (Vec<T>, Vec<T>) {
        let mut k = Vec::with_capacity(self.len * self.width);
        let mut v = Vec::with_capacity(self.len * self.width);
        for i in 0..self.len {
            let slot = (self.head + i) % self.cap;
            let r = slot * self.width..(slot + 1) * self.width;
            k.extend_from_slice(&self.k[r.clone()]);
            v.extend_from_slice(&self.v[r]);
        }
        (k, v)
    }
}

/// Append-only key/value rows for one causal layer.
#[derive(Clone, Debug)]
pub struct GrowKv<T> {
    width: usize,
    pub(crate) k: Vec<T>,
    pub(crate) v: Vec<T>,
}

impl<T: Scalar> GrowKv<T> {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            k: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.k.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    pub fn extend(&mut self, k: &[T], v: &[T]) {
        debug_assert_eq!(k.len() % self.width, 0);
        debug_assert_eq!(k.len(), v.len());
        self.k.extend_from_slice(k);
        self.v.extend_from_slice(v);
    }

    pub fn keys(&self) -> &[T] {
        &self.k
    }

    pub fn values(&self) -> &[T] {
        &self.v
    }
}

/// Byte-level caches: one ring per encoder layer and one per decoder layer,
/// each holding at most the attention window.
#[derive(Clone, Debug)]
pub struct ByteCache<T> {
    pub encoder: Vec<RingKv<T>>,
    pub decoder: Vec<RingKv<T>>,
}

impl<T: Scalar> ByteCache<T> {
    pub fn new(c: &HatConfig) -> Self {
        let ring = |s: &crate::model::StackConfig| {
            (0..s.n_layers)
                .map(|_| RingKv::new(s.kv_dim(), s.window.unwrap_or(c.max_byte_positions)))
                .collect()
        };
        Self {
            encoder: ring(&c.encoder),
            decoder: ring(&c.decoder),
        }
    }

    /// Rows held per layer (identical across layers).
    pub fn rows(&self) -> usize {
        self.encoder.first().or(self.decoder.first()).map_or(0, RingKv::len)
    }
}

/// Word-level cache: one growing store per backbone layer. Its length is the
/// number of backbone positions consumed, BOS included.
#[derive(Clone, Debug)]
pub struct WordCache<T> {
    pub layers: Vec<GrowKv<T>>,
}

impl<T: Scalar> WordCache<T> {
    pub fn new(c: &HatConfig) -> Self {
        Self {
            layers: (0..c.backbone.n_layers).map(|_| GrowKv::new(c.backbone.kv_dim())).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.layers.first().map_or(0, GrowKv::len)
    }
}

/// Cache occupancy of one session.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CacheReport {
    pub byte_rows: usize,
    pub word_rows: usize,
    /// Key and value storage for the rows above at the session's precision.
    pub memory_bytes: usize,
}

impl CacheReport {
    pub fn of(c: &HatConfig, byte_rows: usize, word_rows: usize, scalar_bytes: usize) -> Self {
        let per_byte = 2 * (c.encoder.n_layers * c.encoder.kv_dim() + c.decoder.n_layers * c.decoder.kv_dim());
        let per_word = 2 * c.backbone.n_layers * c.backbone.kv_dim();
        Self {
            byte_rows,
            word_rows,
            memory_bytes: (byte_rows * per_byte + word_rows * per_word) * scalar_bytes,
        }
    }
}
