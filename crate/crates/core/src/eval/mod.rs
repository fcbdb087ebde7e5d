//! Cluster-to-label matching and ensemble metrics.
//!
//! Every cross-member metric works on mapped labels: each member is matched
//! to the ground truth on its own before its predictions are compared with
//! anyone else's.

mod hungarian;
mod metrics;
mod prototypes;
mod report;

use thiserror::Error;

use crate::autodiff::Tensor;

pub use hungarian::{hungarian_match, Matching};
pub use metrics::{
    agreement_rate, confusion_matrix, disagreement_filter, majority_vote, n_guess_accuracy,
    tiered_vote, top_k_table, ConfusionMatrix, FilterResult, TieRule, TieredVote, TopKRow,
    VoteResult,
};
pub use prototypes::{
    confident_prototypes, top1_span, ClusterPrototypes, Prototype, PrototypeReport,
};
pub use report::{
    evaluate_ensemble, EnsembleReport, EvalOptions, FilterSummary, MemberSummary, PairSummary,
    SpanRow, VoteSummary,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("count matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("prediction set `{source_id}` has no cluster-to-label mapping")]
    Unmapped { source_id: String },
    #[error("expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("{members} members cannot fill {tiers} tiers")]
    TooFewMembers { members: usize, tiers: usize },
    #[error("quorum must lie in (0.5, 1], got {0}")]
    BadQuorum(f64),
    #[error("prototype count must be at least 1")]
    BadPrototypeCount,
    #[error("row {row} is not a probability vector")]
    BadProbabilities { row: usize },
    #[error("label {label} is outside 0..{n_labels}")]
    LabelOutOfRange { label: usize, n_labels: usize },
    #[error("{n_clusters} clusters cannot be matched onto {n_labels} labels")]
    TooManyClusters { n_clusters: usize, n_labels: usize },
    #[error("members disagree on the label space: {0} vs {1} labels")]
    LabelSpaceMismatch(usize, usize),
    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// One classifier's outputs on a fixed sample order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    probs: Tensor,
    argmax: Vec<usize>,
    mapping: Option<Vec<usize>>,
    n_labels: usize,
    source: String,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = i;
        }
    }
    best
}

impl PredictionSet {
    /// Wraps a `[samples, clusters]` probability matrix. Argmax ties go to
    /// the lower cluster.
    pub fn new(probs: Tensor, source: impl Into<String>) -> Result<Self, EvalError> {
        if probs.rank() != 2 || probs.shape()[1] == 0 {
            return Err(EvalError::BadProbabilities { row: 0 });
        }
        for (row, p) in probs.rows().enumerate() {
            let sum: f64 = p.iter().sum();
            if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (sum - 1.0).abs() > 1e-6 {
                return Err(EvalError::BadProbabilities { row });
            }
        }
        let argmax = probs.rows().map(argmax).collect();
        let n_labels = probs.shape()[1];
        Ok(Self {
            probs,
            argmax,
            mapping: None,
            n_labels,
            source: source.into(),
        })
    }

    /// Attaches the optimal cluster-to-label mapping against `labels`.
    ///
    /// With more labels than clusters the count matrix is padded with empty
    /// clusters, so some labels are never predicted.
    pub fn mapped(mut self, labels: &[usize], n_labels: usize) -> Result<Self, EvalError> {
        self.check_len(labels.len())?;
        let n_clusters = self.n_clusters();
        if n_clusters > n_labels {
            return Err(EvalError::TooManyClusters {
                n_clusters,
                n_labels,
            });
        }
        let mut counts = vec![vec![0u64; n_labels]; n_labels];
        for (&l, &c) in labels.iter().zip(&self.argmax) {
            if l >= n_labels {
                return Err(EvalError::LabelOutOfRange { label: l, n_labels });
            }
            counts[l][c] += 1;
        }
        let m = hungarian_match(&counts)?;
        self.mapping = Some(m.permutation[..n_clusters].to_vec());
        self.n_labels = n_labels;
        Ok(self)
    }

    /// Attaches a known mapping, `mapping[cluster] = label`.
    pub fn with_mapping(mut self, mapping: Vec<usize>, n_labels: usize) -> Result<Self, EvalError> {
        if mapping.len() != self.n_clusters() {
            return Err(EvalError::LengthMismatch {
                expected: self.n_clusters(),
                got: mapping.len(),
            });
        }
        let mut seen = vec![false; n_labels];
        for &l in &mapping {
            if l >= n_labels || std::mem::replace(&mut seen[l], true) {
                return Err(EvalError::LabelOutOfRange { label: l, n_labels });
            }
        }
        self.mapping = Some(mapping);
        self.n_labels = n_labels;
        Ok(self)
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    pub fn mapping(&self) -> Option<&[usize]> {
        self.mapping.as_deref()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.argmax.len()
    }

    pub fn is_empty(&self) -> bool {
        self.argmax.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.probs.shape()[1]
    }

    /// Size of the label space the mapping targets.
    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    /// Probability of the argmax cluster for sample `i`.
    pub fn confidence(&self, i: usize) -> f64 {
        self.probs.data()[i * self.n_clusters() + self.argmax[i]]
    }

    pub fn mapped_labels(&self) -> Result<Vec<usize>, EvalError> {
        let map = self.mapping.as_ref().ok_or_else(|| EvalError::Unmapped {
            source_id: self.source.clone(),
        })?;
        Ok(self.argmax.iter().map(|&c| map[c]).collect())
    }

    pub fn accuracy(&self, labels: &[usize]) -> Result<f64, EvalError> {
        self.check_len(labels.len())?;
        let mapped = self.mapped_labels()?;
        let hits = mapped.iter().zip(labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }

    fn check_len(&self, n: usize) -> Result<(), EvalError> {
        if n == self.len() {
            Ok(())
        } else {
            Err(EvalError::LengthMismatch {
                expected: self.len(),
                got: n,
            })
        }
    }

    /// Comma-separated table: `sample_id, p0..p{n-1}, argmax, mapped_label`.
    /// `mapped_label` is empty when no mapping is attached.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let n = self.n_clusters();
        let mut header = vec!["sample_id".to_string()];
        header.extend((0..n).map(|c| format!("p{c}")));
        header.extend(["argmax".to_string(), "mapped_label".to_string()]);
        w.write_record(&header).expect("in-memory write");
        for (i, row) in self.probs.rows().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|p| p.to_string()));
            rec.push(self.argmax[i].to_string());
            rec.push(
                self.mapping
                    .as_ref()
                    .map(|m| m[self.argmax[i]].to_string())
                    .unwrap_or_default(),
            );
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("ascii")
    }

    /// Reads [`to_csv`](Self::to_csv) output. The mapping is rebuilt from
    /// the `(argmax, mapped_label)` pairs; `n_labels` sizes its label space.
    pub fn from_csv(
        text: &str,
        source: impl Into<String>,
        n_labels: usize,
    ) -> Result<Self, EvalError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| parse(1, e))?.clone();
        let n = header
            .len()
            .checked_sub(3)
            .filter(|&n| n > 0)
            .ok_or_else(|| EvalError::Parse {
                line: 1,
                reason: "expected sample_id, probabilities, argmax, mapped_label".into(),
            })?;
        let mut data = Vec::new();
        let mut pairs = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| parse(line, e))?;
            if rec.get(0) != Some(i.to_string().as_str()) {
                return Err(EvalError::Parse {
                    line,
                    reason: format!("expected sample_id {i}"),
                });
            }
            for c in 0..n {
                data.push(rec[c + 1].parse::<f64>().map_err(|e| parse(line, e))?);
            }
            let am: usize = rec[n + 1].parse().map_err(|e| parse(line, e))?;
            let mapped = &rec[n + 2];
            pairs.push((
                line,
                am,
                (!mapped.is_empty())
                    .then(|| mapped.parse::<usize>())
                    .transpose()
                    .map_err(|e| parse(line, e))?,
            ));
        }
        let rows = pairs.len();
        let probs = Tensor::new(vec![rows, n], data).map_err(|e| parse(0, e))?;
        let mut set = Self::new(probs, source)?;
        let mut mapping: Vec<Option<usize>> = vec![None; n];
        for (i, &(line, am, mapped)) in pairs.iter().enumerate() {
            if am != set.argmax[i] {
                return Err(EvalError::Parse {
                    line,
                    reason: format!("argmax {am} disagrees with probabilities"),
                });
            }
            match (mapped, mapping[am]) {
                (Some(l), None) => mapping[am] = Some(l),
                (Some(l), Some(prev)) if l != prev => {
                    return Err(EvalError::Parse {
                        line,
                        reason: format!("cluster {am} mapped to both {prev} and {l}"),
                    })
                }
                _ => {}
            }
        }
        if pairs.iter().any(|p| p.2.is_some()) {
            // Clusters that are never predicted take the unused labels in order.
            let mut free = (0..n_labels).filter(|l| !mapping.contains(&Some(*l)));
            let full: Vec<usize> = mapping
                .iter()
                .map(|m| m.or_else(|| free.next()).unwrap_or(usize::MAX))
                .collect();
            set = set.with_mapping(full, n_labels)?;
        }
        Ok(set)
    }
}

fn parse(line: usize, e: impl std::fmt::Display) -> EvalError {
    EvalError::Parse {
        line,
        reason: e.to_string(),
    }
}

/// Prediction set whose rows are one-hot on the given clusters.
pub fn one_hot_set(clusters: &[usize], n: usize, source: &str) -> PredictionSet {
    let mut data = Vec::with_capacity(clusters.len() * n);
    for &c in clusters {
        data.extend((0..n).map(|j| if j == c { 1.0 } else { 0.0 }));
    }
    PredictionSet::new(Tensor::from_parts(vec![clusters.len(), n], data), source)
        .expect("one-hot rows are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mapping_recovers_permutation() {
        let set = one_hot_set(&[1, 1, 0, 0, 2], 3, "a")
            .mapped(&[0, 0, 1, 1, 2], 3)
            .unwrap();
        assert_eq!(set.mapping(), Some(&[1, 0, 2][..]));
        assert_eq!(set.accuracy(&[0, 0, 1, 1, 2]).unwrap(), 1.0);
    }

    #[test]
    fn rectangular_mapping_pads() {
        // two clusters, four labels
        let set = one_hot_set(&[0, 0, 1, 1], 2, "a")
            .mapped(&[3, 3, 1, 2], 4)
            .unwrap();
        assert_eq!(set.mapping(), Some(&[3, 1][..]));
        assert_eq!(set.accuracy(&[3, 3, 1, 2]).unwrap(), 0.75);
    }

    #[test]
    fn unmapped_is_an_error() {
        let set = one_hot_set(&[0, 1], 2, "raw");
        assert_eq!(
            set.accuracy(&[0, 1]),
            Err(EvalError::Unmapped {
                source_id: "raw".into()
            })
        );
    }

    #[test]
    fn argmax_ties_go_low() {
        let p = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap();
        assert_eq!(PredictionSet::new(p, "t").unwrap().argmax(), &[0, 1]);
    }

    #[test]
    fn rejects_invalid_rows() {
        let p = Tensor::from_rows(&[vec![0.5, 0.6]]).unwrap();
        assert_eq!(
            PredictionSet::new(p, "t"),
            Err(EvalError::BadProbabilities { row: 0 })
        );
    }

    #[test]
    fn csv_round_trip() {
        let p = Tensor::from_rows(&[
            vec![0.1, 0.9, 0.0],
            vec![0.7, 0.2, 0.1],
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        ])
        .unwrap();
        let set = PredictionSet::new(p, "x")
            .unwrap()
            .mapped(&[2, 0, 1], 3)
            .unwrap();
        let back = PredictionSet::from_csv(&set.to_csv(), "x", 3).unwrap();
        assert_eq!(back.probs(), set.probs());
        assert_eq!(back.mapped_labels().unwrap(), set.mapped_labels().unwrap());

        let raw = PredictionSet::new(set.probs().clone(), "y").unwrap();
        let back = PredictionSet::from_csv(&raw.to_csv(), "y", 3).unwrap();
        assert_eq!(back.mapping(), None);
    }
}
