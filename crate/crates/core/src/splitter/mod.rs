//! Rule-based word splitting over UTF-8 bytes.
//!
//! A split is an ordered tuple of non-empty, contiguous byte spans whose
//! concatenation is the input. Boundaries start from the default UAX #29
//! word boundaries and are then adjusted:
//!
//! * within a segment, a lowercase letter followed by an uppercase letter
//!   opens a new chunk (`FooBar` becomes `Foo` + `Bar`);
//! * every math symbol (general category `Sm`) is isolated;
//! * a maximal run of whitespace is merged into the following chunk, and a
//!   run at the very end of the text forms its own chunk;
//! * a maximal run of punctuation (general category `P*`) directly after a
//!   non-punctuation chunk is merged into that chunk;
//! * chunks longer than `max_word_bytes` are cut at the last code point
//!   boundary that fits.

mod incremental;
pub(crate) mod uax29;

pub use incremental::{IncrementalSplitter, WordClosed};

use std::ops::Range;

use unicode_general_category::{get_general_category, GeneralCategory as Gc};

use crate::error::{Error, Result};

/// Default cap on the byte length of a single chunk.
pub const DEFAULT_MAX_WORD_BYTES: usize = 128;

/// Smallest usable cap: one code point is at most four bytes.
pub const MIN_MAX_WORD_BYTES: usize = 4;

/// Half-open byte range `[start, end)` of one chunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WordSpan {
    pub start: usize,
    pub end: usize,
}

impl WordSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start < end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn shifted(&self, by: usize) -> Self {
        Self {
            start: self.start + by,
            end: self.end + by,
        }
    }
}

/// Ordered, gap-free chunk spans covering an input.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitResult {
    pub spans: Vec<WordSpan>,
}

impl SplitResult {
    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// The chunks as byte slices of `text`.
    pub fn chunks<'a>(&self, text: &'a [u8]) -> Vec<&'a [u8]> {
        self.spans.iter().map(|s| &text[s.range()]).collect()
    }

    /// Per-byte chunk index.
    pub fn word_index(&self) -> Vec<usize> {
        let mut index = Vec::with_capacity(self.spans.last().map_or(0, |s| s.end));
        for (j, span) in self.spans.iter().enumerate() {
            index.extend(std::iter::repeat(j).take(span.len()));
        }
        index
    }

    /// Renders the spans as `off0:off1,off1:off2,...`.
    pub fn to_offsets_string(&self) -> String {
        self.spans
            .iter()
            .map(|s| format!("{}:{}", s.start, s.end))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Parses the `off0:off1,...` rendering.
    pub fn from_offsets_string(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Ok(Self::default());
        }
        let spans = s
            .split(',')
            .map(|pair| {
                let (a, b) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("bad span `{pair}`")))?;
                let start = a
                    .parse()
                    .map_err(|_| Error::Config(format!("bad offset `{a}`")))?;
                let end = b
                    .parse()
                    .map_err(|_| Error::Config(format!("bad offset `{b}`")))?;
                Ok(WordSpan { start, end })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spans })
    }
}

/// Validates `bytes` as UTF-8, reporting the first offending offset.
pub fn validate_utf8(bytes: &[u8]) -> Result<&str> {
    std::str::from_utf8(bytes).map_err(|e| Error::MalformedInput {
        offset: e.valid_up_to(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum AtomKind {
    Space,
    Punct,
    Word,
}

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        Gc::ConnectorPunctuation
            | Gc::DashPunctuation
            | Gc::OpenPunctuation
            | Gc::ClosePunctuation
            | Gc::InitialPunctuation
            | Gc::FinalPunctuation
            | Gc::OtherPunctuation
    )
}

pub(crate) fn is_math_symbol(c: char) -> bool {
    get_general_category(c) == Gc::MathSymbol
}

fn classify(atom: &str) -> AtomKind {
    if atom.chars().all(char::is_whitespace) {
        AtomKind::Space
    } else if atom.chars().all(is_punctuation) {
        AtomKind::Punct
    } else {
        AtomKind::Word
    }
}

/// Splits a UAX #29 segment at lower→upper transitions and around math
/// symbols, pushing the resulting atom boundaries into `cuts`.
fn refine_segment(text: &str, seg: Range<usize>, cuts: &mut Vec<usize>) {
    let mut prev: Option<char> = None;
    for (i, c) in text[seg.clone()].char_indices() {
        let at = seg.start + i;
        if let Some(p) = prev {
            let camel = p.is_lowercase()
                && get_general_category(p) == Gc::LowercaseLetter
                && get_general_category(c) == Gc::UppercaseLetter;
            if camel || is_math_symbol(c) || is_math_symbol(p) {
                cuts.push(at);
            }
        }
        prev = Some(c);
    }
}

/// Word splitter configured with a chunk length cap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Splitter {
    max_word_bytes: usize,
}

impl Default for Splitter {
    fn default() -> Self {
        Self {
            max_word_bytes: DEFAULT_MAX_WORD_BYTES,
        }
    }
}

impl Splitter {
    pub fn new(max_word_bytes: usize) -> Result<Self> {
        if max_word_bytes < MIN_MAX_WORD_BYTES {
            return Err(Error::Config(format!(
                "max_word_bytes must be at least {MIN_MAX_WORD_BYTES}, got {max_word_bytes}"
            )));
        }
        Ok(Self { max_word_bytes })
    }

    pub fn max_word_bytes(&self) -> usize {
        self.max_word_bytes
    }

    /// Splits raw bytes; fails on invalid UTF-8.
    pub fn split(&self, text: &[u8]) -> Result<SplitResult> {
        let s = validate_utf8(text)?;
        Ok(self.split_str(s))
    }

    pub fn split_str(&self, text: &str) -> SplitResult {
        if text.is_empty() {
            return SplitResult::default();
        }
        let bounds = uax29::word_boundaries(text);
        let mut cuts = Vec::with_capacity(bounds.len() + 8);
        for w in bounds.windows(2) {
            cuts.push(w[0]);
            refine_segment(text, w[0]..w[1], &mut cuts);
        }
        cuts.push(text.len());

        // (start, end, kind of the first non-space atom)
        let mut chunks: Vec<(usize, usize, AtomKind)> = Vec::new();
        let mut space_start: Option<usize> = None;
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            match classify(&text[a..b]) {
                AtomKind::Space => {
                    space_start.get_or_insert(a);
                }
                AtomKind::Punct
                    if space_start.is_none()
                        && chunks.last().is_some_and(|c| c.2 != AtomKind::Punct) =>
                {
                    chunks.last_mut().unwrap().1 = b;
                }
                kind => chunks.push((space_start.take().unwrap_or(a), b, kind)),
            }
        }
        if let Some(a) = space_start {
            chunks.push((a, text.len(), AtomKind::Space));
        }

        let mut spans = Vec::with_capacity(chunks.len());
        for (start, end, _) in chunks {
            self.push_capped(text, start, end, &mut spans);
        }
        SplitResult { spans }
    }

    fn push_capped(&self, text: &str, mut start: usize, end: usize, out: &mut Vec<WordSpan>) {
        while end - start > self.max_word_bytes {
            let mut cut = start + self.max_word_bytes;
            while !text.is_char_boundary(cut) {
                cut -= 1;
            }
            out.push(WordSpan::new(start, cut));
            start = cut;
        }
        out.push(WordSpan::new(start, end));
    }

    /// Index of the chunk containing each byte.
    pub fn word_index_of_bytes(&self, text: &[u8]) -> Result<Vec<usize>> {
        Ok(self.split(text)?.word_index())
    }

    pub fn incremental(&self) -> IncrementalSplitter {
        IncrementalSplitter::new(*self)
    }
}

/// Raw UAX #29 word boundary offsets (before any merge rules), including
/// 0 and `text.len()` for non-empty input.
pub fn uax29_word_boundaries(text: &str) -> Vec<usize> {
    uax29::word_boundaries(text)
}

/// Splits with the default cap.
pub fn split(text: &[u8]) -> Result<SplitResult> {
    Splitter::default().split(text)
}

/// Per-byte chunk indices with the default cap.
pub fn word_index_of_bytes(text: &[u8]) -> Result<Vec<usize>> {
    Splitter::default().word_index_of_bytes(text)
}

/// Prefix-consistency violation: after pushing `prefix_len` bytes, the
/// incremental splitter had closed `incremental` words while the batch
/// split of the same prefix has `batch` closed chunks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrefixViolation {
    pub prefix_len: usize,
    pub batch: usize,
    pub incremental: usize,
}

/// Compares the incremental splitter against batch splits of every prefix
/// of `text` that ends on a code point boundary.
pub fn prefix_consistency(splitter: &Splitter, text: &str) -> Result<Vec<PrefixViolation>> {
    let bytes = text.as_bytes();
    let mut inc = splitter.incremental();
    let mut violations = Vec::new();
    for (i, &b) in bytes.iter().enumerate() {
        inc.push_byte(b)?;
        let len = i + 1;
        if !text.is_char_boundary(len) {
            continue;
        }
        let batch = splitter.split_str(&text[..len]).len().saturating_sub(1);
        if batch != inc.closed_words() {
            violations.push(PrefixViolation {
                prefix_len: len,
                batch,
                incremental: inc.closed_words(),
            });
        }
    }
    Ok(violations)
}
