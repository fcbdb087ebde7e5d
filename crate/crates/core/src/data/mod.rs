//! Synthetic two-level datasets, Gaussian augmentation and neighbor mining.

mod augment;
mod neighbors;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::Tensor;

pub use augment::{augment, augment_rows, AugmentationSpec};
pub use neighbors::{mine_neighbors, NeighborIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("invalid dataset parameters: {0}")]
    InvalidParams(String),
    #[error("k = {k} needs more than {k} samples, dataset has {n}")]
    TooFewSamples { k: usize, n: usize },
    #[error("embeddings are empty or ragged")]
    BadEmbeddings,
    #[error("augmentation noise must be finite and non-negative, got {0}")]
    BadNoise(f64),
    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Generation parameters for [`generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateParams {
    pub n_super: usize,
    pub n_sub_per_super: usize,
    pub d_in: usize,
    pub samples_per_sub: usize,
    /// Distance of each superclass center from the origin.
    pub separation: f64,
    /// Distance of each subclass center from its superclass center.
    pub sub_spread: f64,
    pub seed: u64,
}

impl Default for GenerateParams {
    fn default() -> Self {
        Self {
            n_super: 4,
            n_sub_per_super: 3,
            d_in: 16,
            samples_per_sub: 50,
            separation: 12.0,
            sub_spread: 5.0,
            seed: 7,
        }
    }
}

impl GenerateParams {
    pub fn validate(&self) -> Result<(), DataError> {
        let counts = [
            ("n_super", self.n_super),
            ("n_sub_per_super", self.n_sub_per_super),
            ("d_in", self.d_in),
            ("samples_per_sub", self.samples_per_sub),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(DataError::InvalidParams(format!(
                "{name} must be at least 1"
            )));
        }
        if !(self.sub_spread > 0.0
            && self.separation > self.sub_spread
            && self.separation.is_finite())
        {
            return Err(DataError::InvalidParams(format!(
                "need separation > sub_spread > 0, got separation {} and sub_spread {}",
                self.separation, self.sub_spread
            )));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.n_super * self.n_sub_per_super * self.samples_per_sub
    }
}

/// Samples with a superclass and a subclass label each.
///
/// Subclass `s` belongs to superclass `s / n_sub_per_super`.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalDataset {
    samples: Tensor,
    super_labels: Vec<usize>,
    sub_labels: Vec<usize>,
    n_super: usize,
    n_sub_per_super: usize,
}

impl HierarchicalDataset {
    pub fn new(
        samples: Tensor,
        super_labels: Vec<usize>,
        sub_labels: Vec<usize>,
        n_super: usize,
        n_sub_per_super: usize,
    ) -> Result<Self, DataError> {
        let [n, d] = *samples.shape() else {
            return Err(DataError::InvalidParams("samples must be a matrix".into()));
        };
        if n == 0 || d == 0 || n_super == 0 || n_sub_per_super == 0 {
            return Err(DataError::InvalidParams("empty dataset".into()));
        }
        if super_labels.len() != n || sub_labels.len() != n {
            return Err(DataError::InvalidParams(format!(
                "{n} samples but {} super and {} sub labels",
                super_labels.len(),
                sub_labels.len()
            )));
        }
        for (i, (&sup, &sub)) in super_labels.iter().zip(&sub_labels).enumerate() {
            if sub >= n_super * n_sub_per_super || sup != sub / n_sub_per_super {
                return Err(DataError::InvalidParams(format!(
                    "sample {i}: sub label {sub} is not inside super label {sup}"
                )));
            }
        }
        Ok(Self {
            samples,
            super_labels,
            sub_labels,
            n_super,
            n_sub_per_super,
        })
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.samples.data()[i * d..(i + 1) * d]
    }

    pub fn super_labels(&self) -> &[usize] {
        &self.super_labels
    }

    pub fn sub_labels(&self) -> &[usize] {
        &self.sub_labels
    }

    pub fn n_super(&self) -> usize {
        self.n_super
    }

    pub fn n_sub_per_super(&self) -> usize {
        self.n_sub_per_super
    }

    pub fn n_sub(&self) -> usize {
        self.n_super * self.n_sub_per_super
    }

    pub fn len(&self) -> usize {
        self.super_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.super_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.shape()[1]
    }

    /// Plain-text form: a header line, then one tab-separated row per sample
    /// holding the coordinates (17 significant digits), super and sub label.
    pub fn export_text(&self) -> String {
        let mut out = format!(
            "ers-dataset n_super={} n_sub_per_super={} d_in={} n_samples={}\n",
            self.n_super,
            self.n_sub_per_super,
            self.dim(),
            self.len()
        );
        for i in 0..self.len() {
            for x in self.sample(i) {
                write!(out, "{x:.16e}\t").expect("write to string");
            }
            writeln!(out, "{}\t{}", self.super_labels[i], self.sub_labels[i])
                .expect("write to string");
        }
        out
    }

    pub fn import_text(text: &str) -> Result<Self, DataError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(DataError::Parse {
            line: 1,
            reason: "missing header".into(),
        })?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("ers-dataset") {
            return Err(DataError::Parse {
                line: 1,
                reason: "header must start with `ers-dataset`".into(),
            });
        }
        let mut get = |key: &str| -> Result<usize, DataError> {
            let field = fields.next().unwrap_or_default();
            field
                .strip_prefix(key)
                .and_then(|v| v.strip_prefix('='))
                .and_then(|v| v.parse().ok())
                .ok_or(DataError::Parse {
                    line: 1,
                    reason: format!("expected `{key}=<count>`, found `{field}`"),
                })
        };
        let n_super = get("n_super")?;
        let n_sub = get("n_sub_per_super")?;
        let d = get("d_in")?;
        let n = get("n_samples")?;

        let mut data = Vec::with_capacity(n * d);
        let mut sup = Vec::with_capacity(n);
        let mut sub = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != d + 2 {
                return Err(DataError::Parse {
                    line: lineno,
                    reason: format!("expected {} fields, found {}", d + 2, parts.len()),
                });
            }
            let bad = |reason: String| DataError::Parse {
                line: lineno,
                reason,
            };
            for p in &parts[..d] {
                data.push(p.parse::<f64>().map_err(|e| bad(format!("`{p}`: {e}")))?);
            }
            sup.push(
                parts[d]
                    .parse()
                    .map_err(|e| bad(format!("super label: {e}")))?,
            );
            sub.push(
                parts[d + 1]
                    .parse()
                    .map_err(|e| bad(format!("sub label: {e}")))?,
            );
        }
        if sup.len() != n {
            return Err(DataError::Parse {
                line: sup.len() + 2,
                reason: format!("header promises {n} samples, found {}", sup.len()),
            });
        }
        let samples =
            Tensor::new(vec![n, d], data).map_err(|e| DataError::InvalidParams(e.to_string()))?;
        Self::new(samples, sup, sub, n_super, n_sub)
    }

    /// SHA-256 of [`export_text`](Self::export_text).
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.export_text().as_bytes()).into()
    }
}

fn random_direction(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Draws unit-variance Gaussian blobs around nested centers.
///
/// Superclass centers sit at distance `separation` from the origin and
/// subclass centers at distance `sub_spread` from their superclass center,
/// all in uniformly random directions. Samples are ordered by subclass.
pub fn generate(params: &GenerateParams) -> Result<HierarchicalDataset, DataError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let d = params.d_in;
    let n = params.n_samples();
    let mut data = Vec::with_capacity(n * d);
    let mut sup = Vec::with_capacity(n);
    let mut sub = Vec::with_capacity(n);
    for s in 0..params.n_super {
        let center: Vec<f64> = random_direction(&mut rng, d)
            .into_iter()
            .map(|x| x * params.separation)
            .collect();
        for j in 0..params.n_sub_per_super {
            let offset = random_direction(&mut rng, d);
            let sub_center: Vec<f64> = center
                .iter()
                .zip(&offset)
                .map(|(c, o)| c + params.sub_spread * o)
                .collect();
            for _ in 0..params.samples_per_sub {
                data.extend(
                    sub_center
                        .iter()
                        .map(|c| c + rng.sample::<f64, _>(StandardNormal)),
                );
                sup.push(s);
                sub.push(s * params.n_sub_per_super + j);
            }
        }
    }
    let samples =
        Tensor::new(vec![n, d], data).map_err(|e| DataError::InvalidParams(e.to_string()))?;
    HierarchicalDataset::new(samples, sup, sub, params.n_super, params.n_sub_per_super)
}
