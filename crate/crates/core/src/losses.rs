//! Pretext and clustering objectives with their entropy-regularization terms.
//!
//! Every term is built on a [`Tape`] so it can be differentiated; the
//! `*_value` helpers evaluate a term on plain tensors.
//!
//! Neighbor probabilities are passed as one `[batch * k, n]` matrix whose
//! rows `i*k .. (i+1)*k` are the neighbors of anchor `i`.
//!
//! With `p̄` the column mean of the anchor batch, the clustering objective is
//!
//! ```text
//! consistency + λ1·Σ_c p̄_c log p̄_c − λ2·pointwise_cross + λ3·mean_cross
//! ```
//!
//! where the two cross terms are `Σ_c Σ_k q log q` averaged over anchors,
//! with `q = anchor_c · neighbor_c` or `q = p̄_c · neighbor_c`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::lambda::LambdaVector;

/// Floor applied to every probability-like quantity before a log.
pub const PROB_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("anchor has no neighbors")]
    EmptyNeighbors,
    #[error("{anchors} anchors with {k} neighbors each need {} neighbor rows, got {rows}", anchors * k)]
    NeighborLayout {
        anchors: usize,
        k: usize,
        rows: usize,
    },
    #[error("class count mismatch: anchors have {anchors}, neighbors have {neighbors}")]
    ClassMismatch { anchors: usize, neighbors: usize },
    #[error("embedding is not unit-norm (norm {norm})")]
    NotNormalized { norm: f64 },
    #[error("non-finite regularization coefficients")]
    NonFiniteLambda,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

fn matrix_shape(tape: &Tape, v: Var) -> Result<(usize, usize), LossError> {
    match *tape.value(v).shape() {
        [0, _] => Err(LossError::EmptyBatch),
        [m, n] => Ok((m, n)),
        ref s => Err(AutodiffError::ShapeMismatch {
            op: "loss",
            detail: format!("expected a probability matrix, got {s:?}"),
        }
        .into()),
    }
}

/// Checks the anchor/neighbor layout and returns `(batch, classes)`.
fn neighbor_layout(
    tape: &Tape,
    anchors: Var,
    neighbors: Var,
    k: usize,
) -> Result<(usize, usize), LossError> {
    let (b, n) = matrix_shape(tape, anchors)?;
    if k == 0 {
        return Err(LossError::EmptyNeighbors);
    }
    let (rows, n2) = match *tape.value(neighbors).shape() {
        [r, c] => (r, c),
        _ => (0, n),
    };
    if rows == 0 {
        return Err(LossError::EmptyNeighbors);
    }
    if n2 != n {
        return Err(LossError::ClassMismatch {
            anchors: n,
            neighbors: n2,
        });
    }
    if rows != b * k {
        return Err(LossError::NeighborLayout {
            anchors: b,
            k,
            rows,
        });
    }
    Ok((b, n))
}

fn repeat_rows(batch: usize, k: usize) -> Vec<usize> {
    (0..batch).flat_map(|i| std::iter::repeat_n(i, k)).collect()
}

/// `Σ_c p̄_c log p̄_c` over the column mean `p̄` of `probs`: the negative
/// entropy of the mean prediction, `-log n` at a uniform mean.
pub fn term_mean_entropy(tape: &mut Tape, probs: Var) -> Result<Var, LossError> {
    matrix_shape(tape, probs)?;
    let mean = tape.mean_rows(probs)?;
    let e = floored_x_log_x(tape, mean)?;
    Ok(tape.sum(e)?)
}

/// Mean over anchor/neighbor pairs of `-log <anchor, neighbor>`.
pub fn term_consistency(
    tape: &mut Tape,
    anchors: Var,
    neighbors: Var,
    k: usize,
) -> Result<Var, LossError> {
    let (b, _) = neighbor_layout(tape, anchors, neighbors, k)?;
    let rep = tape.gather_rows(anchors, repeat_rows(b, k))?;
    let prod = tape.mul(rep, neighbors)?;
    let dots = tape.sum_last_axis(prod)?;
    let clamped = tape.clamp(dots, PROB_FLOOR, 1.0)?;
    let logs = tape.log(clamped)?;
    let m = tape.mean(logs)?;
    Ok(tape.neg(m)?)
}

/// `Σ_c Σ_k q log q` with `q = anchor_c · neighbor_c`, averaged over anchors.
pub fn term_pointwise_cross(
    tape: &mut Tape,
    anchors: Var,
    neighbors: Var,
    k: usize,
) -> Result<Var, LossError> {
    let (b, _) = neighbor_layout(tape, anchors, neighbors, k)?;
    let rep = tape.gather_rows(anchors, repeat_rows(b, k))?;
    let q = tape.mul(rep, neighbors)?;
    cross_sum(tape, q, b)
}

/// `Σ_c Σ_k r log r` with `r = p̄_c · neighbor_c`, averaged over anchors.
///
/// `mean_probs` is the column mean of the anchor batch, which has
/// `neighbor rows / k` anchors.
pub fn term_mean_cross(
    tape: &mut Tape,
    mean_probs: Var,
    neighbors: Var,
    k: usize,
) -> Result<Var, LossError> {
    if k == 0 {
        return Err(LossError::EmptyNeighbors);
    }
    let (rows, n) = match *tape.value(neighbors).shape() {
        [r, c] if r > 0 => (r, c),
        _ => return Err(LossError::EmptyNeighbors),
    };
    let mean_len = tape.value(mean_probs).len();
    if tape.value(mean_probs).shape() != [n] {
        return Err(LossError::ClassMismatch {
            anchors: mean_len,
            neighbors: n,
        });
    }
    if rows % k != 0 {
        return Err(LossError::NeighborLayout {
            anchors: rows / k,
            k,
            rows,
        });
    }
    let r = tape.mul_row_broadcast(neighbors, mean_probs)?;
    cross_sum(tape, r, rows / k)
}

/// `x · log(clamp(x))`: zero entries contribute exactly zero while the log
/// stays finite.
fn floored_x_log_x(tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
    let clamped = tape.clamp(x, PROB_FLOOR, 1.0)?;
    let logs = tape.log(clamped)?;
    tape.mul(x, logs)
}

fn cross_sum(tape: &mut Tape, products: Var, anchors: usize) -> Result<Var, LossError> {
    let e = floored_x_log_x(tape, products)?;
    let s = tape.sum(e)?;
    Ok(tape.scale(s, 1.0 / anchors as f64)?)
}

/// Two-view pretext loss: `(1 - s) - λ0·s·log s` with `s` the clamped
/// cosine similarity of the (unit-norm) views, averaged over rows.
///
/// Accepts single embeddings `[d]` or batches `[batch, d]`.
pub fn simclr_ers_loss(tape: &mut Tape, a: Var, b: Var, lambda0: f64) -> Result<Var, LossError> {
    if !lambda0.is_finite() {
        return Err(LossError::NonFiniteLambda);
    }
    for v in [a, b] {
        let t = tape.value(v);
        if t.is_empty() {
            return Err(LossError::EmptyBatch);
        }
        for row in t.rows() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(LossError::NotNormalized { norm });
            }
        }
    }
    let prod = tape.mul(a, b)?;
    let sim = tape.sum_last_axis(prod)?;
    let distance = tape.scale(sim, -1.0)?;
    let distance = tape.add_scalar(distance, 1.0)?;
    let s = tape.clamp(sim, PROB_FLOOR, 1.0)?;
    let slogs = floored_x_log_x(tape, s)?;
    let reg = tape.scale(slogs, -lambda0)?;
    let per_row = tape.add(distance, reg)?;
    Ok(tape.mean(per_row)?)
}

/// Handles to the individual clustering terms and their weighted total.
#[derive(Debug, Clone, Copy)]
pub struct ScanLossVars {
    pub total: Var,
    pub consistency: Var,
    pub mean_entropy: Var,
    pub pointwise_cross: Var,
    pub mean_cross: Var,
}

/// Values of the clustering terms at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanTermValues {
    pub consistency: f64,
    pub mean_entropy: f64,
    pub pointwise_cross: f64,
    pub mean_cross: f64,
    pub total: f64,
}

impl ScanTermValues {
    pub fn to_array(self) -> [f64; 5] {
        [
            self.consistency,
            self.mean_entropy,
            self.pointwise_cross,
            self.mean_cross,
            self.total,
        ]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            consistency: a[0],
            mean_entropy: a[1],
            pointwise_cross: a[2],
            mean_cross: a[3],
            total: a[4],
        }
    }
}

/// Full regularized clustering objective.
pub fn scan_ers_loss(
    tape: &mut Tape,
    anchors: Var,
    neighbors: Var,
    k: usize,
    lambdas: &LambdaVector,
) -> Result<ScanLossVars, LossError> {
    if !lambdas.is_finite() {
        return Err(LossError::NonFiniteLambda);
    }
    let consistency = term_consistency(tape, anchors, neighbors, k)?;
    let mean_entropy = term_mean_entropy(tape, anchors)?;
    let pointwise_cross = term_pointwise_cross(tape, anchors, neighbors, k)?;
    let mean = tape.mean_rows(anchors)?;
    let mean_cross = term_mean_cross(tape, mean, neighbors, k)?;

    let mut total = consistency;
    for (term, weight) in [
        (mean_entropy, lambdas.lambda1),
        (pointwise_cross, -lambdas.lambda2),
        (mean_cross, lambdas.lambda3),
    ] {
        if weight != 0.0 {
            let scaled = tape.scale(term, weight)?;
            total = tape.add(total, scaled)?;
        }
    }
    Ok(ScanLossVars {
        total,
        consistency,
        mean_entropy,
        pointwise_cross,
        mean_cross,
    })
}

impl ScanLossVars {
    pub fn values(&self, tape: &Tape) -> Result<ScanTermValues, LossError> {
        Ok(ScanTermValues {
            consistency: tape.scalar_value(self.consistency)?,
            mean_entropy: tape.scalar_value(self.mean_entropy)?,
            pointwise_cross: tape.scalar_value(self.pointwise_cross)?,
            mean_cross: tape.scalar_value(self.mean_cross)?,
            total: tape.scalar_value(self.total)?,
        })
    }
}

/// Clustering terms evaluated on plain probability matrices.
pub fn scan_terms_value(
    anchors: &Tensor,
    neighbors: &Tensor,
    k: usize,
    lambdas: &LambdaVector,
) -> Result<ScanTermValues, LossError> {
    let mut tape = Tape::new();
    let a = tape.constant(anchors.clone());
    let nb = tape.constant(neighbors.clone());
    scan_ers_loss(&mut tape, a, nb, k, lambdas)?.values(&tape)
}

pub fn mean_entropy_value(probs: &Tensor) -> Result<f64, LossError> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let out = term_mean_entropy(&mut tape, p)?;
    Ok(tape.scalar_value(out)?)
}

pub fn consistency_value(anchors: &Tensor, neighbors: &Tensor, k: usize) -> Result<f64, LossError> {
    pair_value(anchors, neighbors, k, term_consistency)
}

pub fn pointwise_cross_value(
    anchors: &Tensor,
    neighbors: &Tensor,
    k: usize,
) -> Result<f64, LossError> {
    pair_value(anchors, neighbors, k, term_pointwise_cross)
}

pub fn mean_cross_value(
    mean_probs: &Tensor,
    neighbors: &Tensor,
    k: usize,
) -> Result<f64, LossError> {
    pair_value(mean_probs, neighbors, k, term_mean_cross)
}

pub fn simclr_ers_value(a: &Tensor, b: &Tensor, lambda0: f64) -> Result<f64, LossError> {
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let bv = tape.constant(b.clone());
    let out = simclr_ers_loss(&mut tape, av, bv, lambda0)?;
    Ok(tape.scalar_value(out)?)
}

fn pair_value(
    a: &Tensor,
    b: &Tensor,
    k: usize,
    term: fn(&mut Tape, Var, Var, usize) -> Result<Var, LossError>,
) -> Result<f64, LossError> {
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let bv = tape.constant(b.clone());
    let out = term(&mut tape, av, bv, k)?;
    Ok(tape.scalar_value(out)?)
}

/// Clustering-term values logged at one training step: the four terms of
/// the objective and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyStateRecord {
    pub step: u64,
    pub terms: ScanTermValues,
}
