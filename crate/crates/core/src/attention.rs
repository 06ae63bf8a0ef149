//! Multi-head scaled dot-product self-attention inside each sub-sequence.
//!
//! Attention is bidirectional within a sub-sequence and never crosses
//! sub-sequence boundaries. Rather than padding windows to a common length,
//! the layout enumerates every (query, key) pair that shares a window, so a
//! short tail window simply has fewer pairs and padded slots never exist.

use crate::autodiff::{Indices, Tape, Var};
use crate::error::{ConfigError, TensorError};

/// Per-head projections, each stored as `[d × d/H]` (the transpose of the
/// `d/H × d` map applied to column vectors).
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub query: Vec<Var>,
    pub key: Vec<Var>,
    pub value: Vec<Var>,
}

impl AttentionParams {
    pub fn heads(&self) -> usize {
        self.query.len()
    }
}

pub fn check_heads(dim: usize, heads: usize) -> Result<(), ConfigError> {
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(ConfigError::Invalid(format!(
            "model dim {dim} is not divisible by {heads} attention heads"
        )));
    }
    Ok(())
}

/// (query, key) pair enumeration for a batch of windows laid out back to back.
#[derive(Debug, Clone)]
pub struct AttentionLayout {
    pub rows: usize,
    pub pair_query: Indices,
    pub pair_key: Indices,
    /// Pairs of query row `k` are `pair_offsets[k]..pair_offsets[k+1]`.
    pub pair_offsets: Indices,
}

impl AttentionLayout {
    /// `lengths[s]` rows belong to window `s`; windows are contiguous.
    pub fn from_lengths(lengths: &[usize]) -> Self {
        let rows: usize = lengths.iter().sum();
        let pairs: usize = lengths.iter().map(|l| l * l).sum();
        let mut q = Vec::with_capacity(pairs);
        let mut k = Vec::with_capacity(pairs);
        let mut offsets = Vec::with_capacity(rows + 1);
        offsets.push(0);
        let mut start = 0;
        for &len in lengths {
            for i in 0..len {
                for j in 0..len {
                    q.push(start + i);
                    k.push(start + j);
                }
                offsets.push(q.len());
            }
            start += len;
        }
        Self {
            rows,
            pair_query: q.into(),
            pair_key: k.into(),
            pair_offsets: offsets.into(),
        }
    }
}

/// Output of the encoder plus per-head attention weights (one entry per pair).
#[derive(Debug, Clone)]
pub struct Encoded {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Encode `[n×d]` context embeddings laid out per `layout`.
pub fn encode_subsequences(
    tape: &mut Tape,
    embeddings: Var,
    params: &AttentionParams,
    layout: &AttentionLayout,
) -> Result<Encoded, TensorError> {
    let shape = tape.shape(embeddings).to_vec();
    if shape.len() != 2 || shape[0] != layout.rows || layout.rows == 0 {
        return Err(TensorError::Contract {
            op: "encode_subsequences",
            msg: format!(
                "embeddings {shape:?} do not match {} layout rows",
                layout.rows
            ),
        });
    }
    let mut heads = Vec::with_capacity(params.heads());
    let mut weights = Vec::with_capacity(params.heads());
    for h in 0..params.heads() {
        let q = tape.matmul(embeddings, params.query[h])?;
        let k = tape.matmul(embeddings, params.key[h])?;
        let v = tape.matmul(embeddings, params.value[h])?;
        let head_dim = tape.shape(q)[1];
        let qp = tape.gather_rows(q, &layout.pair_query)?;
        let kp = tape.gather_rows(k, &layout.pair_key)?;
        let logits = tape.row_dot(qp, kp)?;
        let logits = tape.scale(logits, 1.0 / (head_dim as f64).sqrt());
        let alpha = tape.segment_softmax(logits, &layout.pair_offsets)?;
        let vp = tape.gather_rows(v, &layout.pair_key)?;
        let weighted = tape.scale_rows(vp, alpha)?;
        heads.push(tape.scatter_add_rows(weighted, &layout.pair_query, layout.rows)?);
        weights.push(alpha);
    }
    let output = tape.concat(&heads, 1)?;
    Ok(Encoded { output, weights })
}

/// Encode a single window `E[K×d]`.
pub fn encode_subsequence(
    tape: &mut Tape,
    embeddings: Var,
    params: &AttentionParams,
) -> Result<Encoded, TensorError> {
    let rows = tape.shape(embeddings)[0];
    encode_subsequences(
        tape,
        embeddings,
        params,
        &AttentionLayout::from_lengths(&[rows]),
    )
}
