use serde::{Deserialize, Serialize};

use super::EvalError;

/// Optimal cluster-to-label assignment for a count matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    /// `permutation[cluster] = label`.
    pub permutation: Vec<usize>,
    pub matched: u64,
    pub total: u64,
}

impl Matching {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matched as f64 / self.total as f64
        }
    }
}

/// Maximum-weight perfect matching on a square count matrix.
///
/// `counts[label][cluster]` holds how often `cluster` was predicted for
/// samples of `label`. Runs the O(n³) shortest-augmenting-path method with
/// exact integer potentials.
pub fn hungarian_match(counts: &[Vec<u64>]) -> Result<Matching, EvalError> {
    let n = counts.len();
    if let Some(row) = counts.iter().find(|r| r.len() != n) {
        return Err(EvalError::NotSquare {
            rows: n,
            cols: row.len(),
        });
    }
    let total: u64 = counts.iter().flatten().sum();
    if n == 0 {
        return Ok(Matching {
            permutation: Vec::new(),
            matched: 0,
            total,
        });
    }
    let max = counts.iter().flatten().copied().max().unwrap_or(0) as i64;
    // Rows are clusters, columns labels; minimize max - count. 1-based with a
    // virtual column 0.
    let cost = |cluster: usize, label: usize| max - counts[label][cluster] as i64;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut permutation = vec![0; n];
    for label in 1..=n {
        permutation[owner[label] - 1] = label - 1;
    }
    let matched = permutation
        .iter()
        .enumerate()
        .map(|(c, &l)| counts[l][c])
        .sum();
    Ok(Matching {
        permutation,
        matched,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_dominant() {
        let m = vec![vec![9, 1, 0], vec![2, 8, 1], vec![0, 0, 7]];
        let r = hungarian_match(&m).unwrap();
        assert_eq!(r.permutation, vec![0, 1, 2]);
        assert_eq!((r.matched, r.total), (24, 28));
    }

    #[test]
    fn anti_diagonal_swaps() {
        let r = hungarian_match(&[vec![0, 10], vec![10, 0]]).unwrap();
        assert_eq!(r.permutation, vec![1, 0]);
        assert_eq!(r.accuracy(), 1.0);
    }

    #[test]
    fn rejects_non_square() {
        assert_eq!(
            hungarian_match(&[vec![1, 2, 3], vec![4, 5, 6]]),
            Err(EvalError::NotSquare { rows: 2, cols: 3 })
        );
    }

    #[test]
    fn empty_and_zero() {
        assert_eq!(hungarian_match(&[]).unwrap().accuracy(), 0.0);
        let r = hungarian_match(&[vec![0, 0], vec![0, 0]]).unwrap();
        assert_eq!(r.matched, 0);
    }
}
