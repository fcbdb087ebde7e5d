use rayon::prelude::*;

use super::DataError;
use crate::autodiff::Tensor;

/// `k` neighbor indices per sample, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    k: usize,
    indices: Vec<usize>,
}

impl NeighborIndex {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// All neighbor lists concatenated; rows `i*k..(i+1)*k` belong to `i`.
    pub fn flat(&self) -> &[usize] {
        &self.indices
    }

    /// Neighbor rows for a batch of anchors, in the same layout.
    pub fn gather(&self, anchors: &[usize]) -> Vec<usize> {
        anchors
            .iter()
            .flat_map(|&i| self.neighbors(i).iter().copied())
            .collect()
    }
}

/// For every row, the `k` other rows with the largest dot product.
///
/// Ties go to the lower index.
pub fn mine_neighbors(embeddings: &Tensor, k: usize) -> Result<NeighborIndex, DataError> {
    let [n, d] = *embeddings.shape() else {
        return Err(DataError::BadEmbeddings);
    };
    if n == 0 || d == 0 {
        return Err(DataError::BadEmbeddings);
    }
    if k == 0 || k >= n {
        return Err(DataError::TooFewSamples { k, n });
    }
    let rows: Vec<&[f64]> = embeddings.rows().collect();
    let indices: Vec<usize> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut scored: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (rows[i].iter().zip(rows[j]).map(|(a, b)| a * b).sum(), j))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            scored.into_iter().take(k).map(|(_, j)| j)
        })
        .collect();
    Ok(NeighborIndex { k, indices })
}
