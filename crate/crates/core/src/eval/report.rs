use serde::{Deserialize, Serialize};

use super::{
    agreement_rate, confident_prototypes, confusion_matrix, disagreement_filter, majority_vote,
    n_guess_accuracy, tiered_vote, top1_span, top_k_table, ConfusionMatrix, EvalError,
    PredictionSet, PrototypeReport, TieRule, TopKRow,
};
use crate::data::HierarchicalDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Subset sizes for the n-guess table; empty means every size.
    pub ks: Vec<usize>,
    pub quorum: f64,
    pub tiers: usize,
    pub prototypes: usize,
    pub tie_rule: TieRule,
    /// Score against subclass labels instead of superclass labels.
    pub subclass_scoring: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: Vec::new(),
            quorum: 0.75,
            tiers: 3,
            prototypes: 5,
            tie_rule: TieRule::default(),
            subclass_scoring: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSummary {
    pub source: String,
    pub accuracy: f64,
    /// `mapping[cluster] = label`.
    pub mapping: Vec<usize>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub a: usize,
    pub b: usize,
    pub agreement: f64,
    pub two_guess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteSummary {
    pub accuracy: f64,
    pub ties: usize,
    pub delegates: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub quorum: f64,
    pub confident: usize,
    pub confused: usize,
    /// Vote accuracy restricted to the confident samples.
    pub confident_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRow {
    pub label: usize,
    pub subclasses: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub n_samples: usize,
    pub n_labels: usize,
    pub label_space: String,
    pub members: Vec<MemberSummary>,
    pub top_k: Vec<TopKRow>,
    pub agreement: Vec<Vec<f64>>,
    pub pairs: Vec<PairSummary>,
    pub majority_vote: VoteSummary,
    pub tiered_vote: Option<VoteSummary>,
    pub filter: FilterSummary,
    pub prototypes: Vec<PrototypeReport>,
    pub prototype_span: Vec<SpanRow>,
}

impl EnsembleReport {
    pub fn best_single(&self) -> f64 {
        self.members
            .iter()
            .map(|m| m.accuracy)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Maps every member against the chosen label space and computes all
/// ensemble metrics.
pub fn evaluate_ensemble(
    members: &[PredictionSet],
    dataset: &HierarchicalDataset,
    options: &EvalOptions,
) -> Result<EnsembleReport, EvalError> {
    if members.is_empty() {
        return Err(EvalError::EmptyEnsemble);
    }
    let (labels, n_labels, label_space) = if options.subclass_scoring {
        (dataset.sub_labels(), dataset.n_sub(), "sub")
    } else {
        (dataset.super_labels(), dataset.n_super(), "super")
    };
    let sets = members
        .iter()
        .map(|m| m.clone().mapped(labels, n_labels))
        .collect::<Result<Vec<_>, _>>()?;

    let summaries = sets
        .iter()
        .map(|s| {
            Ok(MemberSummary {
                source: s.source().to_string(),
                accuracy: s.accuracy(labels)?,
                mapping: s.mapping().expect("mapped above").to_vec(),
                confusion: confusion_matrix(s, labels)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    let ks: Vec<usize> = if options.ks.is_empty() {
        (1..=sets.len()).collect()
    } else {
        options.ks.clone()
    };
    let top_k = top_k_table(&sets, labels, &ks)?;

    let n = sets.len();
    let mut agreement = vec![vec![1.0; n]; n];
    let mut pairs = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let r = agreement_rate(&sets[a], &sets[b])?;
            agreement[a][b] = r;
            agreement[b][a] = r;
            pairs.push(PairSummary {
                a,
                b,
                agreement: r,
                two_guess: n_guess_accuracy(&[sets[a].clone(), sets[b].clone()], labels)?,
            });
        }
    }

    let vote = majority_vote(&sets, labels, options.tie_rule)?;
    let tiered = if n >= options.tiers && options.tiers > 0 {
        let t = tiered_vote(&sets, labels, options.tiers)?;
        Some(VoteSummary {
            accuracy: t.vote.accuracy,
            ties: t.vote.tied.iter().filter(|&&t| t).count(),
            delegates: t.delegates,
        })
    } else {
        None
    };

    let split = disagreement_filter(&sets, options.quorum)?;
    let confident_hits = split
        .confident
        .iter()
        .filter(|&&i| vote.winners[i] == labels[i])
        .count();
    let filter = FilterSummary {
        quorum: options.quorum,
        confident: split.confident.len(),
        confused: split.confused.len(),
        confident_accuracy: (!split.confident.is_empty())
            .then(|| confident_hits as f64 / split.confident.len() as f64),
    };

    let prototypes = sets
        .iter()
        .map(|s| confident_prototypes(s, dataset, options.prototypes))
        .collect::<Result<Vec<_>, _>>()?;
    let prototype_span = top1_span(&prototypes)
        .into_iter()
        .map(|(label, subs)| SpanRow {
            label,
            subclasses: subs.into_iter().collect(),
        })
        .collect();

    Ok(EnsembleReport {
        n_samples: labels.len(),
        n_labels,
        label_space: label_space.to_string(),
        members: summaries,
        top_k,
        agreement,
        pairs,
        majority_vote: VoteSummary {
            accuracy: vote.accuracy,
            ties: vote.tied.iter().filter(|&&t| t).count(),
            delegates: (0..n).collect(),
        },
        tiered_vote: tiered,
        filter,
        prototypes,
        prototype_span,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::eval::one_hot_set;

    fn dataset() -> HierarchicalDataset {
        let samples = Tensor::from_parts(vec![6, 1], (0..6).map(f64::from).collect());
        HierarchicalDataset::new(
            samples,
            vec![0, 0, 0, 1, 1, 1],
            vec![0, 0, 1, 2, 2, 3],
            2,
            2,
        )
        .unwrap()
    }

    #[test]
    fn report_on_permuted_members() {
        let ds = dataset();
        let a = one_hot_set(&[1, 1, 1, 0, 0, 0], 2, "a");
        let b = one_hot_set(&[0, 0, 1, 1, 1, 1], 2, "b");
        let r = evaluate_ensemble(&[a, b], &ds, &EvalOptions::default()).unwrap();
        assert_eq!(r.members[0].accuracy, 1.0);
        assert_eq!(r.members[0].mapping, vec![1, 0]);
        assert!((r.members[1].accuracy - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(r.top_k.len(), 2);
        assert_eq!(r.top_k[1].best, 1.0);
        assert_eq!(r.pairs.len(), 1);
        assert!((r.agreement[0][1] - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(r.tiered_vote, None);
        assert_eq!(r.filter.confident + r.filter.confused, 6);
        assert_eq!(r.best_single(), 1.0);
    }

    #[test]
    fn subclass_scoring_pads() {
        let ds = dataset();
        let a = one_hot_set(&[0, 0, 0, 1, 1, 1], 2, "a");
        let opts = EvalOptions {
            subclass_scoring: true,
            ..EvalOptions::default()
        };
        let r = evaluate_ensemble(&[a], &ds, &opts).unwrap();
        assert_eq!(r.n_labels, 4);
        assert_eq!(r.members[0].accuracy, 4.0 / 6.0);
    }

    #[test]
    fn empty_ensemble() {
        assert_eq!(
            evaluate_ensemble(&[], &dataset(), &EvalOptions::default()),
            Err(EvalError::EmptyEnsemble)
        );
    }
}
