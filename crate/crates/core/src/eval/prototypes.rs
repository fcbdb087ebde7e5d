use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{EvalError, PredictionSet};
use crate::data::HierarchicalDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub index: usize,
    pub confidence: f64,
    pub super_label: usize,
    pub sub_label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPrototypes {
    pub cluster: usize,
    pub mapped_label: Option<usize>,
    /// Most confident first.
    pub prototypes: Vec<Prototype>,
    /// Set when the cluster holds fewer than `m` samples.
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeReport {
    pub source: String,
    pub m: usize,
    pub clusters: Vec<ClusterPrototypes>,
}

impl PrototypeReport {
    /// Subclasses of the top prototype of every cluster, keyed by the
    /// cluster's mapped label (or its id when unmapped).
    pub fn top1_subclasses(&self) -> BTreeMap<usize, BTreeSet<usize>> {
        let mut out: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for c in &self.clusters {
            if let Some(p) = c.prototypes.first() {
                out.entry(c.mapped_label.unwrap_or(c.cluster))
                    .or_default()
                    .insert(p.sub_label);
            }
        }
        out
    }
}

/// Union of [`PrototypeReport::top1_subclasses`] over several reports.
pub fn top1_span(reports: &[PrototypeReport]) -> BTreeMap<usize, BTreeSet<usize>> {
    let mut out: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for r in reports {
        for (label, subs) in r.top1_subclasses() {
            out.entry(label).or_default().extend(subs);
        }
    }
    out
}

/// The `m` samples each cluster is most confident about, among the samples
/// whose argmax is that cluster. Confidence ties go to the lower index.
pub fn confident_prototypes(
    preds: &PredictionSet,
    dataset: &HierarchicalDataset,
    m: usize,
) -> Result<PrototypeReport, EvalError> {
    if m == 0 {
        return Err(EvalError::BadPrototypeCount);
    }
    if preds.len() != dataset.len() {
        return Err(EvalError::LengthMismatch {
            expected: dataset.len(),
            got: preds.len(),
        });
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); preds.n_clusters()];
    for (i, &c) in preds.argmax().iter().enumerate() {
        members[c].push(i);
    }
    let clusters = members
        .into_iter()
        .enumerate()
        .map(|(cluster, mut idx)| {
            idx.sort_by(|&a, &b| {
                preds
                    .confidence(b)
                    .total_cmp(&preds.confidence(a))
                    .then(a.cmp(&b))
            });
            let partial = idx.len() < m;
            idx.truncate(m);
            ClusterPrototypes {
                cluster,
                mapped_label: preds.mapping().map(|map| map[cluster]),
                prototypes: idx
                    .into_iter()
                    .map(|i| Prototype {
                        index: i,
                        confidence: preds.confidence(i),
                        super_label: dataset.super_labels()[i],
                        sub_label: dataset.sub_labels()[i],
                    })
                    .collect(),
                partial,
            }
        })
        .collect();
    Ok(PrototypeReport {
        source: preds.source().to_string(),
        m,
        clusters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::eval::one_hot_set;

    fn tiny() -> HierarchicalDataset {
        let samples = Tensor::from_parts(vec![4, 1], vec![0.0, 1.0, 2.0, 3.0]);
        HierarchicalDataset::new(samples, vec![0, 0, 1, 1], vec![0, 1, 2, 3], 2, 2).unwrap()
    }

    #[test]
    fn one_hot_prototypes_are_certain() {
        let r = confident_prototypes(&one_hot_set(&[0, 0, 1, 1], 2, "a"), &tiny(), 2).unwrap();
        for c in &r.clusters {
            assert!(!c.partial);
            assert!(c.prototypes.iter().all(|p| p.confidence == 1.0));
        }
        assert_eq!(r.clusters[1].prototypes[0].sub_label, 2);
    }

    #[test]
    fn sorted_and_partial() {
        let probs = Tensor::from_rows(&[
            vec![0.6, 0.4],
            vec![0.9, 0.1],
            vec![0.9, 0.1],
            vec![0.2, 0.8],
        ])
        .unwrap();
        let preds = PredictionSet::new(probs, "s").unwrap();
        let r = confident_prototypes(&preds, &tiny(), 2).unwrap();
        let idx: Vec<usize> = r.clusters[0].prototypes.iter().map(|p| p.index).collect();
        assert_eq!(idx, vec![1, 2]);
        assert!(r.clusters[1].partial);
        assert_eq!(r.clusters[1].prototypes.len(), 1);
        assert_eq!(
            confident_prototypes(&preds, &tiny(), 0),
            Err(EvalError::BadPrototypeCount)
        );
    }

    #[test]
    fn span_unions_members() {
        let ds = tiny();
        let a = one_hot_set(&[0, 0, 1, 1], 2, "a")
            .with_mapping(vec![0, 1], 2)
            .unwrap();
        let probs = Tensor::from_rows(&[
            vec![0.6, 0.4],
            vec![0.9, 0.1],
            vec![0.1, 0.9],
            vec![0.2, 0.8],
        ])
        .unwrap();
        let b = PredictionSet::new(probs, "b")
            .unwrap()
            .with_mapping(vec![0, 1], 2)
            .unwrap();
        let reports = [
            confident_prototypes(&a, &ds, 1).unwrap(),
            confident_prototypes(&b, &ds, 1).unwrap(),
        ];
        let span = top1_span(&reports);
        assert_eq!(span[&0], BTreeSet::from([0, 1]));
        assert_eq!(span[&1], BTreeSet::from([2]));
    }
}
