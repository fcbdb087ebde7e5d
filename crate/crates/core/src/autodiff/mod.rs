//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! Values are recorded on a [`Tape`] as they are computed; [`Tape::backward`]
//! then sweeps the record in reverse to produce a [`GradientMap`] for every
//! leaf created with [`Tape::param`].
//!
//! ```
//! use ers_core::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item().unwrap(), 6.0);
//! ```

mod ops;
mod tape;
mod tensor;

pub use ops::{forward, vjp, Primitive};
pub use tape::{GradientMap, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op} expects {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("domain error in {op}: input {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("{op} produced a non-finite value ({value})")]
    NonFinite { op: &'static str, value: f64 },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("variable {index} does not belong to this tape")]
    ForeignVar { index: usize },
    #[error("finite-difference step {0} outside [1e-7, 1e-3]")]
    BadStep(f64),
}

/// Applies a single primitive on a fresh tape and returns its value.
pub fn apply_primitive(prim: Primitive, inputs: &[Tensor]) -> Result<Tensor, AutodiffError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = tape.apply(prim, &vars)?;
    Ok(tape.value(out).clone())
}

/// Compares the reverse-mode gradient of `f` at `x` against central finite
/// differences with step `eps`.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
pub fn grad_check<F, E>(f: F, x: &Tensor, eps: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape, Var) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(AutodiffError::BadStep(eps).into());
    }
    let eval = |point: Tensor| -> Result<f64, E> {
        let mut tape = Tape::new();
        let v = tape.param(point);
        let out = f(&mut tape, v)?;
        Ok(tape.scalar_value(out)?)
    };

    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(v)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
