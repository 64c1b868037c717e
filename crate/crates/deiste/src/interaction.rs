//! Everything derived from word-to-word interactions: the cosine interaction
//! matrix, per-word importance scores, soft alignments, best-match indices,
//! and position embeddings of those indices.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::graph::{Axis, Graph, NodeId};
use crate::numerics::tensor::Tensor;

/// `1 + max` is clamped to this range before the reciprocal, bounding the
/// importance scores to `[0.5, 10]` even when a word's best match is -1.
pub const IMPORTANCE_CLAMP: (f64, f64) = (0.1, 2.0);

/// Learned embeddings for best-match positions.
///
/// One table is shared across all sentence pairs; lookups beyond `rows` are
/// clamped to the last row.
#[derive(Debug, Clone)]
pub struct PositionTable {
    /// `[max_positions, d_m]`.
    pub table: Tensor,
}

impl PositionTable {
    /// Random initialization in `[-0.05, 0.05)`.
    pub fn random<R: Rng>(max_positions: usize, dim: usize, rng: &mut R) -> Self {
        PositionTable {
            table: Tensor::rand_uniform(vec![max_positions, dim], -0.05, 0.05, rng),
        }
    }

    pub fn max_positions(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }
}

/// Pairwise cosine similarities between the columns of two feature maps:
/// entry `(i, j)` compares column `i` of `a` (`[d, n_a]`) with column `j` of
/// `b` (`[d, n_b]`). Entries touching a masked (padded) column are fixed at
/// -1 so they can never win a max or argmax, and they are excluded from
/// softmax weights downstream.
pub fn interaction_matrix(
    g: &mut Graph,
    a: NodeId,
    b: NodeId,
    a_mask: &[bool],
    b_mask: &[bool],
) -> Result<NodeId> {
    g.cosine_columns(a, b, a_mask, b_mask)
}

/// Importance of each word: the reciprocal of `1 + best-match cosine`,
/// clamped so poorly matched words weigh more without blowing up.
/// `Axis::Rows` scores the row sentence of `interaction`, `Axis::Cols` the
/// column sentence. Differentiable through the max: gradient flows to the
/// best-match entry of the interaction matrix.
pub fn importance_scores(g: &mut Graph, interaction: NodeId, axis: Axis) -> Result<NodeId> {
    let m = match axis {
        Axis::Rows => interaction,
        Axis::Cols => g.transpose(interaction)?,
    };
    let (max, _) = g.max_pool_rows(m)?;
    let shifted = g.add_scalar(max, 1.0);
    let clamped = g.clamp(shifted, IMPORTANCE_CLAMP.0, IMPORTANCE_CLAMP.1);
    Ok(g.recip(clamped))
}

/// Soft alignment: column `i` of the output is the softmax-weighted average
/// of the unmasked columns of `other` (`[d, n_other]`), with weights from row
/// `i` of `interaction`. Pass the transposed interaction matrix to align the
/// other direction. Fully differentiable through both inputs.
pub fn soft_align(
    g: &mut Graph,
    interaction: NodeId,
    other: NodeId,
    other_mask: &[bool],
) -> Result<NodeId> {
    if !other_mask.iter().any(|&m| m) {
        return Err(Error::degenerate(
            "soft_align: every position of the other sentence is masked",
        ));
    }
    let weights = g.masked_softmax(interaction, other_mask)?; // [n_self, n_other]
    let weights_t = g.transpose(weights)?; // [n_other, n_self]
    g.matmul(other, weights_t) // [d, n_self]
}

/// Index of the best-matched unmasked column for every row of the
/// interaction matrix. Ties break to the lowest index. This is a discrete
/// read-out of forward values and carries no gradient.
pub fn best_match_indices(interaction: &Tensor, other_mask: &[bool]) -> Result<Vec<usize>> {
    if interaction.rank() != 2 {
        return Err(Error::contract(format!(
            "best_match_indices expects a matrix, got shape {:?}",
            interaction.shape()
        )));
    }
    let (rows, cols) = (interaction.rows(), interaction.cols());
    if other_mask.len() != cols {
        return Err(Error::contract(format!(
            "best_match_indices: mask length {} does not match {} columns",
            other_mask.len(),
            cols
        )));
    }
    if !other_mask.iter().any(|&m| m) {
        return Err(Error::degenerate(
            "best_match_indices: every position is masked",
        ));
    }
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut best: Option<usize> = None;
        for j in 0..cols {
            if !other_mask[j] {
                continue;
            }
            let v = interaction.at(r, j);
            if best.is_none_or(|b| v > interaction.at(r, b)) {
                best = Some(j);
            }
        }
        out.push(best.expect("at least one unmasked column"));
    }
    Ok(out)
}

/// Embed best-match positions: column `i` of the output (`[d_m, n]`) is row
/// `min(indices[i], rows - 1)` of the table. Gradients flow into the
/// selected rows, accumulating over repeats.
pub fn position_embed(g: &mut Graph, table: NodeId, indices: &[usize]) -> Result<NodeId> {
    let last = g.value(table).rows() - 1;
    let opts: Vec<Option<usize>> = indices.iter().map(|&i| Some(i.min(last))).collect();
    g.gather_cols(table, &opts)
}

/// Like [`position_embed`] but emits zero columns (no gradient) at masked
/// positions, so padded slots behave exactly like out-of-range neighbors.
pub fn position_embed_masked(
    g: &mut Graph,
    table: NodeId,
    indices: &[usize],
    self_mask: &[bool],
) -> Result<NodeId> {
    let last = g.value(table).rows() - 1;
    let opts: Vec<Option<usize>> = indices
        .iter()
        .zip(self_mask)
        .map(|(&i, &keep)| keep.then_some(i.min(last)))
        .collect();
    g.gather_cols(table, &opts)
}
