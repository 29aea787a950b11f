//! Per-session model inputs and mini-batch assembly.

use rayon::prelude::*;

use crate::encoder::{densify, EmbeddingTable, EncodedSession, SegmentMap};
use crate::error::{Error, Result};
use crate::models::config::ModelKind;
use crate::mtf::{build_mtf, MtfOptions};
use crate::tensor::Tensor;

/// Dense sequences and/or transition fields for a set of sessions,
/// precomputed once so the training loop only assembles batches.
pub struct ModelData {
    /// Per-session [T, D] dense matrices (rnn, fused, mlp).
    pub dense: Vec<Tensor>,
    /// Per-session [l, l] transition fields (cnn_mtf, fused).
    pub fields: Vec<Tensor>,
    pub labels: Vec<Option<u8>>,
    pub n: usize,
    pub t_len: usize,
    pub feat_dim: usize,
    pub mtf_side: usize,
}

impl ModelData {
    /// Precompute the inputs `kind` consumes. Sessions must already be
    /// padded/truncated to a common length.
    pub fn prepare(
        sessions: &[EncodedSession],
        map: &SegmentMap,
        embeddings: Option<&EmbeddingTable>,
        kind: ModelKind,
    ) -> Result<ModelData> {
        if sessions.is_empty() {
            return Err(Error::InvalidData("no sessions to prepare".into()));
        }
        let t_len = sessions[0].events.len();
        if let Some(s) = sessions.iter().find(|s| s.events.len() != t_len) {
            return Err(Error::ShapeMismatch(format!(
                "session length {} differs from {t_len}; pad/truncate first",
                s.events.len()
            )));
        }
        let side = map.total_width;
        let needs_dense = kind.uses_rnn() || kind == ModelKind::Mlp;
        let dense = if needs_dense {
            sessions
                .par_iter()
                .map(|s| densify(s, map, embeddings))
                .collect()
        } else {
            Vec::new()
        };
        let fields = if kind.uses_cnn() {
            let opts = MtfOptions::with_pad_indices(map.pad_indices());
            sessions
                .par_iter()
                .map(|s| build_mtf(s, side, &opts).map(|f| f.probabilities))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let feat_dim = dense.first().map_or(0, |d| d.shape()[1]);
        Ok(ModelData {
            dense,
            fields,
            labels: sessions.iter().map(|s| s.label).collect(),
            n: sessions.len(),
            t_len,
            feat_dim,
            mtf_side: side,
        })
    }

    /// T tensors of shape [n, D]: step t stacked over the chosen sessions.
    pub fn steps_batch(&self, idx: &[usize]) -> Vec<Tensor> {
        let n = idx.len();
        (0..self.t_len)
            .map(|t| {
                let mut step = Tensor::zeros(&[n, self.feat_dim]);
                for (r, &i) in idx.iter().enumerate() {
                    step.row_mut(r).copy_from_slice(self.dense[i].row(t));
                }
                step
            })
            .collect()
    }

    /// [n, D] mean of each session's event rows over T.
    pub fn features_batch(&self, idx: &[usize]) -> Tensor {
        let n = idx.len();
        let inv = 1.0 / self.t_len as f64;
        let mut out = Tensor::zeros(&[n, self.feat_dim]);
        for (r, &i) in idx.iter().enumerate() {
            let row = out.row_mut(r);
            for t in 0..self.t_len {
                for (acc, v) in row.iter_mut().zip(self.dense[i].row(t)) {
                    *acc += v * inv;
                }
            }
        }
        out
    }

    /// [n, 1, l, l] transition-field stack.
    pub fn fields_batch(&self, idx: &[usize]) -> Tensor {
        let l = self.mtf_side;
        let mut out = Tensor::zeros(&[idx.len(), 1, l, l]);
        let volume = l * l;
        for (r, &i) in idx.iter().enumerate() {
            out.data_mut()[r * volume..(r + 1) * volume].copy_from_slice(self.fields[i].data());
        }
        out
    }

    /// Labels for a batch; unlabeled sessions are a data error here.
    pub fn labels_batch(&self, idx: &[usize]) -> Result<Vec<u8>> {
        idx.iter()
            .map(|&i| {
                self.labels[i].ok_or_else(|| {
                    Error::InvalidData(format!("session at index {i} has no label"))
                })
            })
            .collect()
    }
}
