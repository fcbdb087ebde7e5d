//! Finite-difference verification of every loss term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check, Tape, Tensor, Var};
use crate::lambda::LambdaVector;
use crate::losses::{
    scan_ers_loss, simclr_ers_loss, term_consistency, term_mean_cross, term_mean_entropy,
    term_pointwise_cross, LossError,
};

pub const TERMS: [&str; 6] = [
    "term_mean_entropy",
    "term_consistency",
    "term_pointwise_cross",
    "term_mean_cross",
    "simclr_ers_loss",
    "scan_ers_loss",
];

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermCheck {
    pub term: &'static str,
    pub seed: u64,
    /// `max |analytic - numeric| / max(1, |analytic|)` over all inputs.
    pub max_rel_error: f64,
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("consistent shape")
}

fn softmax_const(tape: &mut Tape, logits: &Tensor) -> Result<Var, LossError> {
    let v = tape.constant(logits.clone());
    Ok(tape.softmax(v)?)
}

/// Checks all six terms at one random point. Probabilities are produced by
/// a softmax over random logits so the checked inputs are unconstrained.
pub fn check_seed(seed: u64) -> Result<Vec<TermCheck>, LossError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, k, n, d) = (4, 3, 4, 6);
    let anchors = random(&mut rng, b, n, 2.0);
    let neighbors = random(&mut rng, b * k, n, 2.0);
    let view_a = random(&mut rng, b, d, 1.0);
    let view_b = random(&mut rng, b, d, 1.0);
    let lambda0 = rng.random_range(0.0..5.0);
    let lambdas = LambdaVector::new(
        lambda0,
        rng.random_range(0.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(0.0..32.0),
    );

    let errors = [
        grad_check(
            |t, v| {
                let p = t.softmax(v)?;
                term_mean_entropy(t, p)
            },
            &anchors,
            FD_STEP,
        )?,
        grad_check(
            |t, v| {
                let p = t.softmax(v)?;
                let nb = softmax_const(t, &neighbors)?;
                term_consistency(t, p, nb, k)
            },
            &anchors,
            FD_STEP,
        )?,
        grad_check(
            |t, v| {
                let a = softmax_const(t, &anchors)?;
                let nb = t.softmax(v)?;
                term_pointwise_cross(t, a, nb, k)
            },
            &neighbors,
            FD_STEP,
        )?,
        grad_check(
            |t, v| {
                let p = t.softmax(v)?;
                let mean = t.mean_rows(p)?;
                let nb = softmax_const(t, &neighbors)?;
                term_mean_cross(t, mean, nb, k)
            },
            &anchors,
            FD_STEP,
        )?,
        grad_check(
            |t, v| {
                let a = t.l2_normalize(v)?;
                let other = t.constant(view_b.clone());
                let bn = t.l2_normalize(other)?;
                simclr_ers_loss(t, a, bn, lambda0)
            },
            &view_a,
            FD_STEP,
        )?,
        grad_check(
            |t, v| {
                let p = t.softmax(v)?;
                let nb = softmax_const(t, &neighbors)?;
                Ok::<_, LossError>(scan_ers_loss(t, p, nb, k, &lambdas)?.total)
            },
            &anchors,
            FD_STEP,
        )?,
    ];
    Ok(TERMS
        .iter()
        .zip(errors)
        .map(|(&term, max_rel_error)| TermCheck {
            term,
            seed,
            max_rel_error,
        })
        .collect())
}

/// Worst error per term over `seeds`.
pub fn check_all(seeds: std::ops::Range<u64>) -> Result<Vec<TermCheck>, LossError> {
    let mut worst: Vec<TermCheck> = TERMS
        .iter()
        .map(|&term| TermCheck {
            term,
            seed: seeds.start,
            max_rel_error: 0.0,
        })
        .collect();
    for seed in seeds {
        for (w, c) in worst.iter_mut().zip(check_seed(seed)?) {
            if c.max_rel_error > w.max_rel_error {
                *w = c;
            }
        }
    }
    Ok(worst)
}
