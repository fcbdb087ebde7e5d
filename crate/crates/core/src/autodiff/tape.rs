use std::collections::BTreeMap;

use super::ops::{self, Primitive};
use super::{AutodiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(super) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { trainable: bool },
    Op { prim: Primitive, inputs: Vec<Var> },
}

#[derive(Debug, Clone)]
struct Node {
    kind: NodeKind,
    value: Tensor,
}

/// Linear record of leaves and primitive applications.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// valid topological order. A tape has a single writer; use one tape per
/// worker.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to each trainable leaf.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientMap {
    grads: BTreeMap<Var, Tensor>,
}

impl GradientMap {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(&var)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.grads.iter().map(|(v, t)| (*v, t))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(NodeKind::Leaf { trainable: true }, value)
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(NodeKind::Leaf { trainable: false }, value)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn scalar_value(&self, var: Var) -> Result<f64, AutodiffError> {
        self.value(var).item()
    }

    fn push(&mut self, kind: NodeKind, value: Tensor) -> Var {
        self.nodes.push(Node { kind, value });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `prim` on recorded inputs and records the result.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var, AutodiffError> {
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(AutodiffError::ForeignVar { index: bad.0 });
        }
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = ops::forward(&prim, &values)?;
        Ok(self.push(
            NodeKind::Op {
                prim,
                inputs: inputs.to_vec(),
            },
            out,
        ))
    }

    /// Re-evaluates every primitive from the recorded leaves and returns
    /// the recomputed node values in tape order.
    pub fn replay(&self) -> Result<Vec<Tensor>, AutodiffError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.kind {
                NodeKind::Leaf { .. } => node.value.clone(),
                NodeKind::Op { prim, inputs } => {
                    let ins: Vec<&Tensor> = inputs.iter().map(|v| &values[v.0]).collect();
                    ops::forward(prim, &ins)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse-mode sweep from a scalar `output`.
    ///
    /// Every trainable leaf gets an entry, zero-filled when `output` does not
    /// depend on it.
    pub fn backward(&self, output: Var) -> Result<GradientMap, AutodiffError> {
        let out = self
            .nodes
            .get(output.0)
            .ok_or(AutodiffError::ForeignVar { index: output.0 })?;
        if out.value.len() != 1 {
            return Err(AutodiffError::NotScalar {
                shape: out.value.shape().to_vec(),
            });
        }

        let mut adjoints: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adjoints[output.0] = Some(Tensor::from_parts(out.value.shape().to_vec(), vec![1.0]));

        for idx in (0..=output.0).rev() {
            let Some(g) = adjoints[idx].take() else {
                continue;
            };
            match &self.nodes[idx].kind {
                NodeKind::Leaf { .. } => {
                    adjoints[idx] = Some(g);
                }
                NodeKind::Op { prim, inputs } => {
                    let ins: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    let local = ops::vjp(prim, &ins, &self.nodes[idx].value, &g);
                    for (input, contribution) in inputs.iter().zip(local) {
                        match &mut adjoints[input.0] {
                            Some(acc) => {
                                for (a, c) in acc.data_mut().iter_mut().zip(contribution.data()) {
                                    *a += c;
                                }
                            }
                            slot @ None => *slot = Some(contribution),
                        }
                    }
                }
            }
        }

        let mut grads = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let NodeKind::Leaf { trainable: true } = node.kind {
                let g = adjoints
                    .get_mut(idx)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec()));
                grads.insert(Var(idx), g);
            }
        }
        Ok(GradientMap { grads })
    }

    // Convenience wrappers over `apply`.

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Log, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Dot, &[a, b])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Softmax, &[a])
    }

    pub fn l2_normalize(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::L2Normalize, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Mean, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Neg, &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Scale(c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.apply(Primitive::AddScalar(c), &[a])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Clamp { lo, hi }, &[a])
    }

    pub fn add_row_broadcast(&mut self, a: Var, v: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::AddRowBroadcast, &[a, v])
    }

    pub fn mul_row_broadcast(&mut self, a: Var, v: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::MulRowBroadcast, &[a, v])
    }

    pub fn sum_last_axis(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::SumLastAxis, &[a])
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::MeanRows, &[a])
    }

    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var, AutodiffError> {
        self.apply(Primitive::GatherRows(rows), &[a])
    }

    /// `x * log(x)` elementwise; `x` must already be positive.
    pub fn x_log_x(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let lx = self.log(x)?;
        self.mul(x, lx)
    }
}
