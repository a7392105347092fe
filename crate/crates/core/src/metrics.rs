//! Compression analytics: bytes per backbone position (BOS excluded).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::splitter::{validate_utf8, Splitter};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileCompression {
    pub name: String,
    pub bytes: u64,
    pub words: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileFailure {
    pub name: String,
    pub error: String,
}

/// Aggregate over a corpus. `bytes_per_position` is `total_bytes /
/// total_words`, where words are backbone positions without BOS.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CompressionReport {
    pub total_bytes: u64,
    pub total_words: u64,
    pub files: Vec<FileCompression>,
    pub failures: Vec<FileFailure>,
}

/// `num / den` rounded half-up to 4 decimals, computed exactly.
pub fn ratio_4dp(num: u64, den: u64) -> Option<String> {
    if den == 0 {
        return None;
    }
    let scaled = (num as u128 * 20_000 + den as u128) / (2 * den as u128);
    Some(format!("{}.{:04}", scaled / 10_000, scaled % 10_000))
}

/// Bytes and word count of one text.
pub fn compress_text(splitter: &Splitter, text: &[u8]) -> Result<(u64, u64)> {
    validate_utf8(text)?;
    Ok((text.len() as u64, splitter.split(text)?.len() as u64))
}

impl CompressionReport {
    pub fn bytes_per_position(&self) -> Option<f64> {
        (self.total_words > 0).then(|| self.total_bytes as f64 / self.total_words as f64)
    }

    pub fn bytes_per_position_4dp(&self) -> Option<String> {
        ratio_4dp(self.total_bytes, self.total_words)
    }

    pub fn add(&mut self, name: &str, outcome: Result<(u64, u64)>) {
        match outcome {
            Ok((bytes, words)) => {
                self.total_bytes += bytes;
                self.total_words += words;
                self.files.push(FileCompression {
                    name: name.to_string(),
                    bytes,
                    words,
                });
            }
            Err(e) => self.failures.push(FileFailure {
                name: name.to_string(),
                error: e.to_string(),
            }),
        }
    }

    /// Aligned plain text with a header stating the denominator.
    pub fn render_text(&self) -> String {
        let na = || "n/a".to_string();
        let width = self.files.iter().map(|f| f.name.len()).chain([5]).max().unwrap_or(5);
        let mut out = String::new();
        let _ = writeln!(out, "# bytes per backbone position (BOS excluded from positions)");
        let _ = writeln!(out, "{:<width$}  {:>10}  {:>8}  {:>10}", "file", "bytes", "words", "bytes/pos");
        for f in &self.files {
            let r = ratio_4dp(f.bytes, f.words).unwrap_or_else(na);
            let _ = writeln!(out, "{:<width$}  {:>10}  {:>8}  {:>10}", f.name, f.bytes, f.words, r);
        }
        let r = self.bytes_per_position_4dp().unwrap_or_else(na);
        let _ = writeln!(
            out,
            "{:<width$}  {:>10}  {:>8}  {:>10}",
            "total", self.total_bytes, self.total_words, r
        );
        for f in &self.failures {
            let _ = writeln!(out, "# error {}: {}", f.name, f.error);
        }
        out
    }

    /// `key=value` lines.
    pub fn render_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "denominator=words_excluding_bos");
        for (i, f) in self.files.iter().enumerate() {
            let _ = writeln!(out, "file.{i}.name={}", f.name);
            let _ = writeln!(out, "file.{i}.bytes={}", f.bytes);
            let _ = writeln!(out, "file.{i}.words={}", f.words);
            let _ = writeln!(
                out,
                "file.{i}.bytes_per_position={}",
                ratio_4dp(f.bytes, f.words).unwrap_or_default()
            );
        }
        for (i, f) in self.failures.iter().enumerate() {
            let _ = writeln!(out, "error.{i}.name={}", f.name);
            let _ = writeln!(out, "error.{i}.message={}", f.error);
        }
        let _ = writeln!(out, "total.bytes={}", self.total_bytes);
        let _ = writeln!(out, "total.words={}", self.total_words);
        let _ = writeln!(
            out,
            "total.bytes_per_position={}",
            self.bytes_per_position_4dp().unwrap_or_default()
        );
        out
    }
}

/// Reports each file in order; unreadable or non-UTF-8 files are recorded as
/// failures and the rest still count.
pub fn compression_report<P: AsRef<Path>>(splitter: &Splitter, paths: &[P]) -> CompressionReport {
    let mut report = CompressionReport::default();
    for p in paths {
        let p = p.as_ref();
        let outcome = std::fs::read(p)
            .map_err(Into::into)
            .and_then(|bytes| compress_text(splitter, &bytes));
        if let Err(e) = &outcome {
            log::warn!("{}: {e}", p.display());
        }
        report.add(&p.display().to_string(), outcome);
    }
    report
}

/// Same as [`compression_report`] over in-memory texts.
pub fn compression_report_texts(splitter: &Splitter, texts: &[(&str, &[u8])]) -> CompressionReport {
    let mut report = CompressionReport::default();
    for (name, text) in texts {
        report.add(name, compress_text(splitter, text));
    }
    report
}
