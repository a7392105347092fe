use super::session::{greedy_pick, GenConfig, GenSession};
use crate::error::{Error, Result};
use crate::model::{forward_assigned, ParamSet};
use crate::tensor::Scalar;

/// Incremental generation compared, step by step, with a full forward pass
/// over everything committed so far.
#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    /// Logit rows compared (one per decoded position, prefill included).
    pub steps: usize,
    pub max_abs_diff: f64,
    /// Steps where the byte picked greedily from the full-pass logits
    /// differs from the byte the session emitted.
    pub byte_mismatches: usize,
    pub generated: Vec<u8>,
}

/// Runs greedy generation and, before every byte, recomputes the next-byte
/// logits with a full pass that uses the session's own word assignment.
pub fn check_equivalence<T: Scalar>(params: &ParamSet<T>, prompt: &[u8], max_new_bytes: usize) -> Result<EquivalenceReport> {
    let mut s = GenSession::new(0, params, GenConfig::greedy(max_new_bytes))?;
    s.prefill(params, prompt)?;
    let mut report = EquivalenceReport {
        steps: 0,
        max_abs_diff: 0.0,
        byte_mismatches: 0,
        generated: Vec::new(),
    };
    while let Some(inc) = s.logits() {
        let full = forward_assigned(params, s.model_bytes(), s.closed_words(), s.word_index())?;
        let row = full.logits.row(full.logits.rows() - 1);
        for (a, b) in inc.iter().zip(row) {
            report.max_abs_diff = report.max_abs_diff.max((a.as_f64() - b.as_f64()).abs());
        }
        report.steps += 1;
        if s.is_finished() {
            break;
        }
        let expected = greedy_pick(row, &s.admissible());
        let out = s.step_byte(params)?;
        if expected != Some(out.byte) {
            report.byte_mismatches += 1;
        }
    }
    if let Some(super::FinishReason::Failed(msg)) = s.finish_reason() {
        return Err(Error::Invariant(format!("generation failed: {msg}")));
    }
    report.generated = s.generated().to_vec();
    Ok(report)
}
