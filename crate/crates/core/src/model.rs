//! Perceptron encoder and softmax cluster head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("expected input of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Layer widths of the encoder and the number of clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub n_clusters: usize,
}

impl ModelConfig {
    pub fn new(input_dim: usize, n_clusters: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![64, 64],
            embedding_dim: 32,
            n_clusters,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.embedding_dim == 0 || self.hidden.contains(&0) {
            return Err(ModelError::Config("layer widths must be positive".into()));
        }
        if self.n_clusters < 2 {
            return Err(ModelError::Config("need at least two clusters".into()));
        }
        Ok(())
    }
}

/// One affine layer, `y = x W + b` with `W` shaped `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
        let w = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
        Self {
            weight: Tensor::from_parts(vec![fan_in, fan_out], w),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Affine map of a row batch, without recording.
    fn apply_rows(&self, rows: &Tensor) -> Tensor {
        let (m, k, n) = (rows.shape()[0], self.in_dim(), self.out_dim());
        let w = self.weight.data();
        let b = self.bias.data();
        let mut out = Vec::with_capacity(m * n);
        for row in rows.data().chunks(k) {
            let mut acc = b.to_vec();
            for (p, &x) in row.iter().enumerate() {
                for (o, &wv) in acc.iter_mut().zip(&w[p * n..(p + 1) * n]) {
                    *o += x * wv;
                }
            }
            out.extend(acc);
        }
        Tensor::from_parts(vec![m, n], out)
    }
}

/// Multilayer perceptron with tanh hidden units and a unit-normalized output.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<Layer>,
}

/// Linear map to cluster logits followed by softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterHead {
    pub layer: Layer,
}

/// Tape handles of one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
}

impl EncoderParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![config.input_dim];
        widths.extend(&config.hidden);
        widths.push(config.embedding_dim);
        let layers = widths
            .windows(2)
            .map(|w| Layer::init(&mut rng, w[0], w[1]))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    /// Records the parameters as trainable leaves.
    pub fn record(&self, tape: &mut Tape) -> Vec<LayerVars> {
        self.layers
            .iter()
            .map(|l| LayerVars {
                weight: tape.param(l.weight.clone()),
                bias: tape.param(l.bias.clone()),
            })
            .collect()
    }

    /// Recorded forward pass of a `[batch, input_dim]` input.
    pub fn forward(tape: &mut Tape, vars: &[LayerVars], input: Var) -> Result<Var, AutodiffError> {
        let mut h = input;
        for (i, layer) in vars.iter().enumerate() {
            let z = tape.matmul(h, layer.weight)?;
            h = tape.add_row_broadcast(z, layer.bias)?;
            if i + 1 < vars.len() {
                h = tape.tanh(h)?;
            }
        }
        tape.l2_normalize(h)
    }

    /// Embeds every row of `input` without recording a tape.
    pub fn embed_rows(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        if input.rank() != 2 || input.shape()[1] != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.shape().last().copied().unwrap_or(0),
            });
        }
        let mut h = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply_rows(&h);
            if i + 1 < self.layers.len() {
                h.data_mut().iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        Ok(crate::autodiff::forward(
            &crate::autodiff::Primitive::L2Normalize,
            &[&h],
        )?)
    }

    pub fn apply_gradients(
        &mut self,
        vars: &[LayerVars],
        grads: &crate::autodiff::GradientMap,
        lr: f64,
    ) {
        for (layer, v) in self.layers.iter_mut().zip(vars) {
            layer.step(v, grads, lr);
        }
    }
}

impl Layer {
    fn step(&mut self, vars: &LayerVars, grads: &crate::autodiff::GradientMap, lr: f64) {
        for (param, var) in [(&mut self.weight, vars.weight), (&mut self.bias, vars.bias)] {
            if let Some(g) = grads.get(var) {
                for (p, gv) in param.data_mut().iter_mut().zip(g.data()) {
                    *p -= lr * gv;
                }
            }
        }
    }
}

impl ClusterHead {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            layer: Layer::init(&mut rng, config.embedding_dim, config.n_clusters),
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.layer.out_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.layer.in_dim()
    }

    pub fn record(&self, tape: &mut Tape) -> LayerVars {
        LayerVars {
            weight: tape.param(self.layer.weight.clone()),
            bias: tape.param(self.layer.bias.clone()),
        }
    }

    /// Recorded `softmax(embedding W + b)` for a `[batch, embedding_dim]` input.
    pub fn forward(tape: &mut Tape, vars: LayerVars, embedding: Var) -> Result<Var, AutodiffError> {
        let z = tape.matmul(embedding, vars.weight)?;
        let logits = tape.add_row_broadcast(z, vars.bias)?;
        tape.softmax(logits)
    }

    /// Cluster probabilities for every row of `embeddings`.
    pub fn probs_rows(&self, embeddings: &Tensor) -> Result<Tensor, ModelError> {
        if embeddings.rank() != 2 || embeddings.shape()[1] != self.embedding_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.embedding_dim(),
                got: embeddings.shape().last().copied().unwrap_or(0),
            });
        }
        let logits = self.layer.apply_rows(embeddings);
        Ok(crate::autodiff::forward(
            &crate::autodiff::Primitive::Softmax,
            &[&logits],
        )?)
    }

    pub fn apply_gradients(
        &mut self,
        vars: LayerVars,
        grads: &crate::autodiff::GradientMap,
        lr: f64,
    ) {
        self.layer.step(&vars, grads, lr);
    }
}

/// Unit-norm embedding of one sample.
pub fn encode(params: &EncoderParams, x: &[f64]) -> Result<Vec<f64>, ModelError> {
    if x.len() != params.input_dim() {
        return Err(ModelError::DimensionMismatch {
            expected: params.input_dim(),
            got: x.len(),
        });
    }
    let row = Tensor::from_parts(vec![1, x.len()], x.to_vec());
    Ok(params.embed_rows(&row)?.into_data())
}

/// Cluster probabilities of one embedding.
pub fn predict_probs(head: &ClusterHead, embedding: &[f64]) -> Result<Vec<f64>, ModelError> {
    if embedding.len() != head.embedding_dim() {
        return Err(ModelError::DimensionMismatch {
            expected: head.embedding_dim(),
            got: embedding.len(),
        });
    }
    let row = Tensor::from_parts(vec![1, embedding.len()], embedding.to_vec());
    Ok(head.probs_rows(&row)?.into_data())
}
