use super::{Splitter, WordSpan};
use crate::error::{Error, Result};

/// A chunk that can no longer change: later bytes proved a new chunk began
/// (or the cap was reached). Offsets are absolute within the pushed stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WordClosed {
    pub span: WordSpan,
}

/// Byte-at-a-time counterpart of [`Splitter::split`], used during generation.
///
/// `pending` holds the open chunk. Each time a code point completes, the
/// open chunk plus that code point is re-split; every chunk but the last is
/// closed. The buffer therefore never exceeds `max_word_bytes` plus one
/// code point.
#[derive(Clone, Debug)]
pub struct IncrementalSplitter {
    splitter: Splitter,
    pending: String,
    pending_start: usize,
    partial: Vec<u8>,
    pushed: usize,
    closed_words: usize,
}

impl IncrementalSplitter {
    pub fn new(splitter: Splitter) -> Self {
        Self {
            splitter,
            pending: String::new(),
            pending_start: 0,
            partial: Vec::with_capacity(4),
            pushed: 0,
            closed_words: 0,
        }
    }

    pub fn closed_words(&self) -> usize {
        self.closed_words
    }

    /// Total bytes pushed so far.
    pub fn pushed(&self) -> usize {
        self.pushed
    }

    /// Bytes not yet assigned to a closed word, including any incomplete
    /// code point.
    pub fn pending_bytes(&self) -> Vec<u8> {
        let mut v = self.pending.as_bytes().to_vec();
        v.extend_from_slice(&self.partial);
        v
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len() + self.partial.len()
    }

    /// Absolute offset where the open chunk starts.
    pub fn pending_start(&self) -> usize {
        self.pending_start
    }

    /// True when the stream stops on a code point boundary.
    pub fn at_codepoint_boundary(&self) -> bool {
        self.partial.is_empty()
    }

    /// Bytes of the code point still being assembled.
    pub fn partial_codepoint(&self) -> &[u8] {
        &self.partial
    }

    pub fn push_byte(&mut self, b: u8) -> Result<Vec<WordClosed>> {
        let offset = self.pushed;
        self.partial.push(b);
        let ch = match std::str::from_utf8(&self.partial) {
            Ok(s) => s.chars().next().expect("non-empty"),
            Err(e) if e.error_len().is_none() => {
                self.pushed += 1;
                return Ok(Vec::new());
            }
            Err(_) => {
                self.partial.pop();
                return Err(Error::MalformedInput { offset });
            }
        };
        self.partial.clear();
        self.pushed += 1;

        self.pending.push(ch);
        let result = self.splitter.split_str(&self.pending);
        let mut events = Vec::new();
        if result.spans.len() > 1 {
            let last = *result.spans.last().unwrap();
            for span in &result.spans[..result.spans.len() - 1] {
                events.push(WordClosed {
                    span: span.shifted(self.pending_start),
                });
            }
            self.closed_words += events.len();
            self.pending.drain(..last.start);
            self.pending_start += last.start;
        }
        Ok(events)
    }

    pub fn push_bytes(&mut self, bytes: &[u8]) -> Result<Vec<WordClosed>> {
        let mut all = Vec::new();
        for &b in bytes {
            all.extend(self.push_byte(b)?);
        }
        Ok(all)
    }
}
