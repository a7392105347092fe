//! Word assignment as seen during generation, and its divergence from the
//! assignment a full split produces.

use crate::error::Result;
use crate::model::{sequence_spans, word_index_from_spans};
use crate::splitter::{IncrementalSplitter, Splitter, WordSpan};

/// Maps a closed text span to model coordinates (`[BOS] + text`): shifted
/// by one, with BOS joining the first word.
pub(crate) fn model_span(text_span: WordSpan, first: bool) -> WordSpan {
    let s = text_span.shifted(1);
    if first {
        WordSpan::new(0, s.end)
    } else {
        s
    }
}

/// Pushes `text` byte by byte and records, for every model byte, how many
/// words were closed right after it arrived; that is the backbone row the
/// byte reads during generation. Returns the closed model spans as well.
pub fn incremental_assignment(splitter: &Splitter, text: &[u8]) -> Result<(Vec<WordSpan>, Vec<usize>)> {
    let mut inc = splitter.incremental();
    let mut closed = Vec::new();
    let mut index = Vec::with_capacity(text.len() + 1);
    index.push(0);
    push_all(&mut inc, text, &mut closed, &mut index)?;
    Ok((closed, index))
}

pub(crate) fn push_all(
    inc: &mut IncrementalSplitter,
    bytes: &[u8],
    closed: &mut Vec<WordSpan>,
    index: &mut Vec<usize>,
) -> Result<()> {
    for &b in bytes {
        for ev in inc.push_byte(b)? {
            let first = closed.is_empty();
            closed.push(model_span(ev.span, first));
        }
        index.push(closed.len());
    }
    Ok(())
}

/// One model byte whose generation-time row differs from the full split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DivergenceCase {
    /// Offset within the text (the model position minus one).
    pub offset: usize,
    pub full: usize,
    pub incremental: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DivergenceReport {
    /// Model bytes compared (BOS included).
    pub bytes: usize,
    pub cases: Vec<DivergenceCase>,
}

impl DivergenceReport {
    pub fn diverged(&self) -> usize {
        self.cases.len()
    }

    pub fn fraction(&self) -> f64 {
        if self.bytes == 0 {
            0.0
        } else {
            self.cases.len() as f64 / self.bytes as f64
        }
    }

    pub fn merge(&mut self, other: DivergenceReport) {
        self.bytes += other.bytes;
        self.cases.extend(other.cases);
    }
}

/// Compares, byte by byte, the backbone row each byte reads in training
/// (full split) with the row it reads during generation.
pub fn boundary_divergence(splitter: &Splitter, text: &[u8]) -> Result<DivergenceReport> {
    let spans = sequence_spans(splitter, text, false)?;
    let full = word_index_from_spans(&spans, text.len() + 1);
    let (_, inc) = incremental_assignment(splitter, text)?;
    let cases = full
        .iter()
        .zip(&inc)
        .enumerate()
        .filter(|(_, (f, i))| f != i)
        .map(|(p, (&full, &incremental))| DivergenceCase {
            offset: p - 1,
            full,
            incremental,
        })
        .collect();
    Ok(DivergenceReport {
        bytes: full.len(),
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_has_no_divergence() {
        let sp = Splitter::default();
        let r = boundary_divergence(&sp, b"Hello, world! FooBar a+b=c; it's 3.14 now.").unwrap();
        assert_eq!(r.diverged(), 0);
        assert_eq!(r.fraction(), 0.0);
    }

    #[test]
    fn multibyte_word_start_lags_one_byte() {
        let sp = Splitter::default();
        // The lead byte of "É" cannot close "Foo" until the code point completes.
        let text = "Foo\u{c9}cole";
        let r = boundary_divergence(&sp, text.as_bytes()).unwrap();
        assert_eq!(
            r.cases,
            [DivergenceCase {
                offset: 3,
                full: 1,
                incremental: 0
            }]
        );
    }

    #[test]
    fn assignment_is_monotone_and_covers_closed_words() {
        let sp = Splitter::default();
        let (closed, idx) = incremental_assignment(&sp, b"one two three").unwrap();
        assert_eq!(idx.len(), 14);
        assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*idx.last().unwrap(), closed.len());
        assert_eq!(closed[0].start, 0);
    }
}
