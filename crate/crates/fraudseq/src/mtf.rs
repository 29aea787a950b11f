//! Markov transition field construction.
//!
//! For every consecutive event pair, every (active index at t, active index
//! at t+1) combination increments a count; row-normalizing the count matrix
//! yields an l x l field of transition probabilities. Rows with no outgoing
//! transitions stay all-zero.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::encoder::EncodedSession;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub struct MtfOptions {
    /// Global indices of per-domain pad values. Transitions with both
    /// endpoints in this set are not counted, so runs of left-padding do
    /// not dominate the field; pad-to-real transitions stay as a
    /// session-start signal.
    pub pad_indices: BTreeSet<usize>,
    /// Additive smoothing applied to rows with at least one count.
    /// Disabled by default.
    pub smoothing: Option<f64>,
}

impl MtfOptions {
    pub fn with_pad_indices(pad: impl IntoIterator<Item = usize>) -> Self {
        MtfOptions { pad_indices: pad.into_iter().collect(), smoothing: None }
    }
}

/// Row-stochastic l x l transition field plus the raw counts it was
/// normalized from (counts are kept for verification, never serialized into
/// model inputs).
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionField {
    pub side: usize,
    pub probabilities: Tensor,
    pub counts: Vec<u64>,
}

impl TransitionField {
    pub fn count(&self, from: usize, to: usize) -> u64 {
        self.counts[from * self.side + to]
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Accumulate transition counts between the active index sets of consecutive
/// events and normalize each row to a probability distribution.
pub fn build_mtf(s: &EncodedSession, side: usize, opts: &MtfOptions) -> Result<TransitionField> {
    if s.events.len() < 2 {
        return Err(Error::SequenceTooShort);
    }
    for ev in &s.events {
        if let Some(&bad) = ev.active.iter().find(|&&i| i >= side) {
            return Err(Error::InvalidData(format!(
                "active index {bad} out of range for field side {side}"
            )));
        }
    }
    let mut counts = vec![0u64; side * side];
    for pair in s.events.windows(2) {
        for &p in &pair[0].active {
            for &q in &pair[1].active {
                if opts.pad_indices.contains(&p) && opts.pad_indices.contains(&q) {
                    continue;
                }
                counts[p * side + q] += 1;
            }
        }
    }
    let smoothing = opts.smoothing.unwrap_or(0.0);
    let mut probabilities = Tensor::zeros(&[side, side]);
    for i in 0..side {
        let row = &counts[i * side..(i + 1) * side];
        let row_total: u64 = row.iter().sum();
        if row_total == 0 {
            continue;
        }
        let denom = row_total as f64 + smoothing * side as f64;
        let out = probabilities.row_mut(i);
        for (j, &c) in row.iter().enumerate() {
            out[j] = (c as f64 + smoothing) / denom;
        }
    }
    Ok(TransitionField { side, probabilities, counts })
}

/// Per-session fields for a batch, in input order. Errors carry the index of
/// the offending session.
pub fn batch_mtf(
    sessions: &[EncodedSession],
    side: usize,
    opts: &MtfOptions,
) -> Result<Vec<TransitionField>> {
    sessions
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            build_mtf(s, side, opts).map_err(|e| Error::InvalidData(format!("session {i}: {e}")))
        })
        .collect()
}

/// Stack fields into an n x l x l tensor for the CNN input.
pub fn stack_fields(fields: &[TransitionField]) -> Result<Tensor> {
    let n = fields.len();
    if n == 0 {
        return Err(Error::InvalidData("no transition fields to stack".into()));
    }
    let side = fields[0].side;
    let mut data = Vec::with_capacity(n * side * side);
    for f in fields {
        if f.side != side {
            return Err(Error::ShapeMismatch(format!(
                "transition field side {} vs {}",
                f.side, side
            )));
        }
        data.extend_from_slice(f.probabilities.data());
    }
    Tensor::from_vec(&[n, side, side], data)
}

/// Debug dump: row-major space-separated grid, 9 significant digits.
pub fn dump_field(field: &TransitionField, path: &Path) -> Result<()> {
    let mut text = String::new();
    for i in 0..field.side {
        let row = field.probabilities.row(i);
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                text.push(' ');
            }
            let _ = write!(text, "{v:.8e}");
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}
