//! Primitive operations: forward evaluation and vector-Jacobian products.
//!
//! Every primitive is a pure function of its input values, which is what
//! lets [`Tape::replay`](super::Tape::replay) reproduce recorded outputs
//! bit-for-bit.

use super::{AutodiffError, Tensor};

/// Identifier of a differentiable primitive, with any constant parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Elementwise `a + b` on identical shapes.
    Add,
    /// Elementwise `a - b`.
    Sub,
    /// Elementwise (Hadamard) product.
    Mul,
    /// `[m, k] x [k, n] -> [m, n]`.
    MatMul,
    Exp,
    /// Natural log; every input value must be strictly positive.
    Log,
    Tanh,
    /// Inner product of two vectors, giving a scalar.
    Dot,
    /// Softmax along the last axis.
    Softmax,
    /// Unit-normalize along the last axis.
    L2Normalize,
    /// Mean of all elements, giving a scalar.
    Mean,
    /// Sum of all elements, giving a scalar.
    Sum,
    Neg,
    /// Multiply by a constant.
    Scale(f64),
    /// Add a constant.
    AddScalar(f64),
    /// Clip into `[lo, hi]`; gradient passes only inside the interval.
    Clamp {
        lo: f64,
        hi: f64,
    },
    /// `[m, n] + [n]`, the vector added to every row.
    AddRowBroadcast,
    /// `[m, n] * [n]`, every row scaled elementwise by the vector.
    MulRowBroadcast,
    /// Sum along the last axis: `[m, n] -> [m]`, `[n] -> []`.
    SumLastAxis,
    /// Column mean of a matrix: `[m, n] -> [n]`.
    MeanRows,
    /// Select rows of a matrix by index (repeats allowed).
    GatherRows(Vec<usize>),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::MatMul => "matmul",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Tanh => "tanh",
            Primitive::Dot => "dot",
            Primitive::Softmax => "softmax",
            Primitive::L2Normalize => "l2_normalize",
            Primitive::Mean => "mean",
            Primitive::Sum => "sum",
            Primitive::Neg => "neg",
            Primitive::Scale(_) => "scale",
            Primitive::AddScalar(_) => "add_scalar",
            Primitive::Clamp { .. } => "clamp",
            Primitive::AddRowBroadcast => "add_row_broadcast",
            Primitive::MulRowBroadcast => "mul_row_broadcast",
            Primitive::SumLastAxis => "sum_last_axis",
            Primitive::MeanRows => "mean_rows",
            Primitive::GatherRows(_) => "gather_rows",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::MatMul
            | Primitive::Dot
            | Primitive::AddRowBroadcast
            | Primitive::MulRowBroadcast => 2,
            _ => 1,
        }
    }
}

fn mismatch(op: &Primitive, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op: op.name(),
        detail,
    }
}

fn same_shape(op: &Primitive, a: &Tensor, b: &Tensor) -> Result<(), AutodiffError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(mismatch(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn matrix_dims(op: &Primitive, t: &Tensor) -> Result<(usize, usize), AutodiffError> {
    match *t.shape() {
        [m, n] => Ok((m, n)),
        ref s => Err(mismatch(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

fn row_op_dims(op: &Primitive, t: &Tensor) -> Result<(), AutodiffError> {
    match t.rank() {
        1 | 2 if t.last_dim() > 0 => Ok(()),
        _ => Err(mismatch(
            op,
            format!("expected rank 1 or 2, got shape {:?}", t.shape()),
        )),
    }
}

fn broadcast_dims(op: &Primitive, a: &Tensor, v: &Tensor) -> Result<(usize, usize), AutodiffError> {
    let (m, n) = matrix_dims(op, a)?;
    if v.shape() != [n] {
        return Err(mismatch(
            op,
            format!("{:?} with vector {:?}", a.shape(), v.shape()),
        ));
    }
    Ok((m, n))
}

/// `[m, k] x [k, n]` on raw row-major buffers.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Evaluates `op` on concrete inputs.
pub fn forward(op: &Primitive, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError> {
    if inputs.len() != op.arity() {
        return Err(AutodiffError::Arity {
            op: op.name(),
            expected: op.arity(),
            got: inputs.len(),
        });
    }
    let a = inputs[0];
    let out = match op {
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            let b = inputs[1];
            same_shape(op, a, b)?;
            match op {
                Primitive::Add => zip(a, b, |x, y| x + y),
                Primitive::Sub => zip(a, b, |x, y| x - y),
                _ => zip(a, b, |x, y| x * y),
            }
        }
        Primitive::MatMul => {
            let b = inputs[1];
            let (m, k) = matrix_dims(op, a)?;
            let (k2, n) = matrix_dims(op, b)?;
            if k != k2 {
                return Err(mismatch(op, format!("{:?} x {:?}", a.shape(), b.shape())));
            }
            Tensor::from_parts(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
        }
        Primitive::Exp => map(a, f64::exp),
        Primitive::Log => {
            if let Some(&bad) = a.data().iter().find(|&&v| v <= 0.0) {
                return Err(AutodiffError::Domain {
                    op: "log",
                    value: bad,
                });
            }
            map(a, f64::ln)
        }
        Primitive::Tanh => map(a, f64::tanh),
        Primitive::Dot => {
            let b = inputs[1];
            if a.rank() != 1 || a.shape() != b.shape() {
                return Err(mismatch(op, format!("{:?} . {:?}", a.shape(), b.shape())));
            }
            Tensor::scalar(a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum())
        }
        Primitive::Softmax => {
            row_op_dims(op, a)?;
            let mut data = Vec::with_capacity(a.len());
            for row in a.rows() {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                data.extend(exps.into_iter().map(|e| e / total));
            }
            Tensor::from_parts(a.shape().to_vec(), data)
        }
        Primitive::L2Normalize => {
            row_op_dims(op, a)?;
            let mut data = Vec::with_capacity(a.len());
            for row in a.rows() {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < 1e-12 {
                    return Err(AutodiffError::Domain {
                        op: "l2_normalize",
                        value: norm,
                    });
                }
                data.extend(row.iter().map(|v| v / norm));
            }
            Tensor::from_parts(a.shape().to_vec(), data)
        }
        Primitive::Mean => {
            if a.is_empty() {
                return Err(mismatch(op, "mean of an empty tensor".into()));
            }
            Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
        }
        Primitive::Sum => Tensor::scalar(a.data().iter().sum()),
        Primitive::Neg => map(a, |v| -v),
        Primitive::Scale(c) => map(a, |v| c * v),
        Primitive::AddScalar(c) => map(a, |v| v + c),
        Primitive::Clamp { lo, hi } => map(a, |v| v.clamp(*lo, *hi)),
        Primitive::AddRowBroadcast | Primitive::MulRowBroadcast => {
            let v = inputs[1];
            let (_, n) = broadcast_dims(op, a, v)?;
            let vd = v.data();
            let add = matches!(op, Primitive::AddRowBroadcast);
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| if add { x + vd[i % n] } else { x * vd[i % n] })
                .collect();
            Tensor::from_parts(a.shape().to_vec(), data)
        }
        Primitive::SumLastAxis => {
            row_op_dims(op, a)?;
            let sums: Vec<f64> = a.rows().map(|r| r.iter().sum()).collect();
            if a.rank() == 1 {
                Tensor::scalar(sums[0])
            } else {
                Tensor::from_parts(vec![a.shape()[0]], sums)
            }
        }
        Primitive::MeanRows => {
            let (m, n) = matrix_dims(op, a)?;
            if m == 0 {
                return Err(mismatch(op, "column mean of a matrix with no rows".into()));
            }
            let mut acc = vec![0.0; n];
            for row in a.rows() {
                for (s, v) in acc.iter_mut().zip(row) {
                    *s += v;
                }
            }
            Tensor::from_parts(vec![n], acc.into_iter().map(|s| s / m as f64).collect())
        }
        Primitive::GatherRows(idx) => {
            let (m, n) = matrix_dims(op, a)?;
            let mut data = Vec::with_capacity(idx.len() * n);
            for &i in idx {
                if i >= m {
                    return Err(mismatch(op, format!("row {i} out of range for {m} rows")));
                }
                data.extend_from_slice(&a.data()[i * n..(i + 1) * n]);
            }
            Tensor::from_parts(vec![idx.len(), n], data)
        }
    };
    if let Some(&bad) = out.data().iter().find(|v| !v.is_finite()) {
        return Err(AutodiffError::NonFinite {
            op: op.name(),
            value: bad,
        });
    }
    Ok(out)
}

/// Vector-Jacobian product: given the upstream gradient `g` of the output,
/// returns one gradient per input, each shaped like that input.
pub fn vjp(op: &Primitive, inputs: &[&Tensor], output: &Tensor, g: &Tensor) -> Vec<Tensor> {
    let a = inputs[0];
    match op {
        Primitive::Add => vec![g.clone(), g.clone()],
        Primitive::Sub => vec![g.clone(), map(g, |v| -v)],
        Primitive::Mul => vec![zip(g, inputs[1], |x, y| x * y), zip(g, a, |x, y| x * y)],
        Primitive::MatMul => {
            let b = inputs[1];
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let bt = transpose_raw(b.data(), k, n);
            let at = transpose_raw(a.data(), m, k);
            vec![
                Tensor::from_parts(vec![m, k], matmul_raw(g.data(), &bt, m, n, k)),
                Tensor::from_parts(vec![k, n], matmul_raw(&at, g.data(), k, m, n)),
            ]
        }
        Primitive::Exp => vec![zip(g, output, |x, y| x * y)],
        Primitive::Log => vec![zip(g, a, |x, y| x / y)],
        Primitive::Tanh => vec![zip(g, output, |x, y| x * (1.0 - y * y))],
        Primitive::Dot => {
            let s = g.data()[0];
            vec![map(inputs[1], |v| s * v), map(a, |v| s * v)]
        }
        Primitive::Softmax => {
            let mut data = Vec::with_capacity(a.len());
            for (gr, yr) in g.rows().zip(output.rows()) {
                let inner: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                data.extend(gr.iter().zip(yr).map(|(x, y)| y * (x - inner)));
            }
            vec![Tensor::from_parts(a.shape().to_vec(), data)]
        }
        Primitive::L2Normalize => {
            let mut data = Vec::with_capacity(a.len());
            for ((gr, yr), xr) in g.rows().zip(output.rows()).zip(a.rows()) {
                let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                let inner: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                data.extend(gr.iter().zip(yr).map(|(x, y)| (x - y * inner) / norm));
            }
            vec![Tensor::from_parts(a.shape().to_vec(), data)]
        }
        Primitive::Mean => {
            let s = g.data()[0] / a.len() as f64;
            vec![Tensor::from_parts(a.shape().to_vec(), vec![s; a.len()])]
        }
        Primitive::Sum => {
            vec![Tensor::from_parts(
                a.shape().to_vec(),
                vec![g.data()[0]; a.len()],
            )]
        }
        Primitive::Neg => vec![map(g, |v| -v)],
        Primitive::Scale(c) => vec![map(g, |v| c * v)],
        Primitive::AddScalar(_) => vec![g.clone()],
        Primitive::Clamp { lo, hi } => {
            vec![zip(
                g,
                a,
                |gv, x| if x >= *lo && x <= *hi { gv } else { 0.0 },
            )]
        }
        Primitive::AddRowBroadcast => {
            let n = a.shape()[1];
            let mut gb = vec![0.0; n];
            for row in g.rows() {
                for (s, v) in gb.iter_mut().zip(row) {
                    *s += v;
                }
            }
            vec![g.clone(), Tensor::from_parts(vec![n], gb)]
        }
        Primitive::MulRowBroadcast => {
            let v = inputs[1];
            let n = a.shape()[1];
            let vd = v.data();
            let ga = g
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x * vd[i % n])
                .collect();
            let mut gb = vec![0.0; n];
            for (gr, ar) in g.rows().zip(a.rows()) {
                for ((s, x), y) in gb.iter_mut().zip(gr).zip(ar) {
                    *s += x * y;
                }
            }
            vec![
                Tensor::from_parts(a.shape().to_vec(), ga),
                Tensor::from_parts(vec![n], gb),
            ]
        }
        Primitive::SumLastAxis => {
            let width = a.last_dim();
            let data = g
                .data()
                .iter()
                .flat_map(|&v| std::iter::repeat_n(v, width))
                .collect();
            vec![Tensor::from_parts(a.shape().to_vec(), data)]
        }
        Primitive::MeanRows => {
            let m = a.shape()[0];
            let row: Vec<f64> = g.data().iter().map(|v| v / m as f64).collect();
            let data = (0..m).flat_map(|_| row.iter().copied()).collect();
            vec![Tensor::from_parts(a.shape().to_vec(), data)]
        }
        Primitive::GatherRows(idx) => {
            let n = a.shape()[1];
            let mut data = vec![0.0; a.len()];
            for (gr, &i) in g.rows().zip(idx) {
                for (s, v) in data[i * n..(i + 1) * n].iter_mut().zip(gr) {
                    *s += v;
                }
            }
            vec![Tensor::from_parts(a.shape().to_vec(), data)]
        }
    }
}
