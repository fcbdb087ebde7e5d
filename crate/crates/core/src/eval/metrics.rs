use serde::{Deserialize, Serialize};

use super::{EvalError, PredictionSet};

/// Counts of (true label, mapped prediction); rows are true labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Sum of absolute cell differences.
    pub fn l1_distance(&self, other: &ConfusionMatrix) -> Result<u64, EvalError> {
        if self.n() != other.n() {
            return Err(EvalError::LabelSpaceMismatch(self.n(), other.n()));
        }
        Ok(self
            .counts
            .iter()
            .flatten()
            .zip(other.counts.iter().flatten())
            .map(|(a, b)| a.abs_diff(*b))
            .sum())
    }
}

pub fn confusion_matrix(
    preds: &PredictionSet,
    labels: &[usize],
) -> Result<ConfusionMatrix, EvalError> {
    let mapped = preds.mapped_labels()?;
    check_len(labels.len(), mapped.len())?;
    let n = preds.n_labels();
    let mut counts = vec![vec![0u64; n]; n];
    for (&l, &p) in labels.iter().zip(&mapped) {
        if l >= n {
            return Err(EvalError::LabelOutOfRange {
                label: l,
                n_labels: n,
            });
        }
        counts[l][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

fn check_len(expected: usize, got: usize) -> Result<(), EvalError> {
    if expected == got {
        Ok(())
    } else {
        Err(EvalError::LengthMismatch { expected, got })
    }
}

/// Mapped labels of every member, checked for a common length.
fn mapped_all(sets: &[PredictionSet], n: Option<usize>) -> Result<Vec<Vec<usize>>, EvalError> {
    let first = sets.first().ok_or(EvalError::EmptyEnsemble)?;
    let n = n.unwrap_or(first.len());
    sets.iter()
        .map(|s| {
            check_len(n, s.len())?;
            if s.n_labels() != first.n_labels() {
                return Err(EvalError::LabelSpaceMismatch(
                    first.n_labels(),
                    s.n_labels(),
                ));
            }
            s.mapped_labels()
        })
        .collect()
}

/// Fraction of samples that at least one member gets right.
pub fn n_guess_accuracy(sets: &[PredictionSet], labels: &[usize]) -> Result<f64, EvalError> {
    let mapped = mapped_all(sets, Some(labels.len()))?;
    let hits = (0..labels.len())
        .filter(|&i| mapped.iter().any(|m| m[i] == labels[i]))
        .count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}

/// Fraction of samples on which two members give the same mapped label.
pub fn agreement_rate(a: &PredictionSet, b: &PredictionSet) -> Result<f64, EvalError> {
    check_len(a.len(), b.len())?;
    let (ma, mb) = (a.mapped_labels()?, b.mapped_labels()?);
    let same = ma.iter().zip(&mb).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieRule {
    /// The tied label backed by the single most confident member, then the
    /// lowest member index.
    #[default]
    HighestConfidenceMember,
    /// The tied label backed by the lowest-index member.
    LowestMemberIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    pub winners: Vec<usize>,
    /// `tallies[i][label]` votes for `label` on sample `i`.
    pub tallies: Vec<Vec<u32>>,
    pub tied: Vec<bool>,
    pub accuracy: f64,
}

/// Plurality vote over mapped labels.
pub fn majority_vote(
    sets: &[PredictionSet],
    labels: &[usize],
    tie_rule: TieRule,
) -> Result<VoteResult, EvalError> {
    let mapped = mapped_all(sets, Some(labels.len()))?;
    let n_labels = sets[0].n_labels();
    let mut winners = Vec::with_capacity(labels.len());
    let mut tallies = Vec::with_capacity(labels.len());
    let mut tied = Vec::with_capacity(labels.len());
    for i in 0..labels.len() {
        let mut tally = vec![0u32; n_labels];
        for m in &mapped {
            tally[m[i]] += 1;
        }
        let top = *tally.iter().max().expect("non-empty label space");
        let is_tied = tally.iter().filter(|&&t| t == top).count() > 1;
        let backers = (0..sets.len()).filter(|&j| tally[mapped[j][i]] == top);
        let chosen = match tie_rule {
            TieRule::LowestMemberIndex => backers.min(),
            TieRule::HighestConfidenceMember => {
                backers.fold(None, |best: Option<usize>, j| match best {
                    Some(b) if sets[b].confidence(i) >= sets[j].confidence(i) => Some(b),
                    _ => Some(j),
                })
            }
        }
        .expect("the top label has a backer");
        winners.push(mapped[chosen][i]);
        tallies.push(tally);
        tied.push(is_tied);
    }
    let hits = winners.iter().zip(labels).filter(|(w, l)| w == l).count();
    Ok(VoteResult {
        winners,
        tallies,
        tied,
        accuracy: hits as f64 / labels.len().max(1) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieredVote {
    /// Member indices ranked by accuracy, best first.
    pub ranking: Vec<usize>,
    /// One member per tier, the best of its tier.
    pub delegates: Vec<usize>,
    pub vote: VoteResult,
}

/// Ranks members by accuracy (ties to the lower index), splits the ranking
/// into `tiers` contiguous groups whose sizes differ by at most one with the
/// larger groups first, and votes among the top member of each group.
pub fn tiered_vote(
    sets: &[PredictionSet],
    labels: &[usize],
    tiers: usize,
) -> Result<TieredVote, EvalError> {
    if sets.is_empty() {
        return Err(EvalError::EmptyEnsemble);
    }
    if tiers == 0 || sets.len() < tiers {
        return Err(EvalError::TooFewMembers {
            members: sets.len(),
            tiers,
        });
    }
    let acc = sets
        .iter()
        .map(|s| s.accuracy(labels))
        .collect::<Result<Vec<_>, _>>()?;
    let mut ranking: Vec<usize> = (0..sets.len()).collect();
    ranking.sort_by(|&a, &b| acc[b].total_cmp(&acc[a]).then(a.cmp(&b)));
    let (base, extra) = (sets.len() / tiers, sets.len() % tiers);
    let mut delegates = Vec::with_capacity(tiers);
    let mut start = 0;
    for t in 0..tiers {
        delegates.push(ranking[start]);
        start += base + usize::from(t < extra);
    }
    let chosen: Vec<PredictionSet> = delegates.iter().map(|&d| sets[d].clone()).collect();
    let vote = majority_vote(&chosen, labels, TieRule::default())?;
    Ok(TieredVote {
        ranking,
        delegates,
        vote,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterResult {
    pub confident: Vec<usize>,
    pub confused: Vec<usize>,
}

/// Splits samples by whether some mapped label gets at least
/// `quorum · members` votes.
pub fn disagreement_filter(sets: &[PredictionSet], quorum: f64) -> Result<FilterResult, EvalError> {
    if !(quorum > 0.5 && quorum <= 1.0) {
        return Err(EvalError::BadQuorum(quorum));
    }
    let mapped = mapped_all(sets, None)?;
    let need = quorum * sets.len() as f64;
    let n_labels = sets[0].n_labels();
    let mut out = FilterResult {
        confident: Vec::new(),
        confused: Vec::new(),
    };
    for i in 0..sets[0].len() {
        let mut tally = vec![0usize; n_labels];
        for m in &mapped {
            tally[m[i]] += 1;
        }
        let top = *tally.iter().max().expect("non-empty label space");
        if top as f64 >= need - 1e-9 {
            out.confident.push(i);
        } else {
            out.confused.push(i);
        }
    }
    Ok(out)
}

/// n-guess accuracy over every `k`-member subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKRow {
    pub k: usize,
    pub subsets: usize,
    pub best: f64,
    pub mean: f64,
    pub median: f64,
    /// Lexicographically first subset reaching `best`.
    pub best_members: Vec<usize>,
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k == 0 || k > n {
        return out;
    }
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Best, mean and median n-guess accuracy for each requested subset size.
/// Sizes of zero or above the member count are skipped.
pub fn top_k_table(
    sets: &[PredictionSet],
    labels: &[usize],
    ks: &[usize],
) -> Result<Vec<TopKRow>, EvalError> {
    let mapped = mapped_all(sets, Some(labels.len()))?;
    let n = labels.len();
    let hit: Vec<Vec<bool>> = mapped
        .iter()
        .map(|m| m.iter().zip(labels).map(|(a, b)| a == b).collect())
        .collect();
    let mut rows = Vec::new();
    for &k in ks {
        let subsets = combinations(sets.len(), k);
        if subsets.is_empty() {
            continue;
        }
        let scores: Vec<f64> = subsets
            .iter()
            .map(|s| {
                (0..n).filter(|&i| s.iter().any(|&j| hit[j][i])).count() as f64 / n.max(1) as f64
            })
            .collect();
        let (best_at, best) =
            scores
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                );
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            (sorted[mid - 1] + sorted[mid]) / 2.0
        };
        rows.push(TopKRow {
            k,
            subsets: subsets.len(),
            best,
            mean: scores.iter().sum::<f64>() / scores.len() as f64,
            median,
            best_members: subsets[best_at].clone(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::one_hot_set;

    fn identity(clusters: &[usize], n: usize, id: &str) -> PredictionSet {
        one_hot_set(clusters, n, id)
            .with_mapping((0..n).collect(), n)
            .unwrap()
    }

    #[test]
    fn confusion_shapes() {
        let labels = [0, 1, 2, 1];
        let perfect = identity(&labels, 3, "p");
        let cm = confusion_matrix(&perfect, &labels).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        let zeros = identity(&[0, 0, 0, 0], 3, "z");
        let cm = confusion_matrix(&zeros, &labels).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![2, 0, 0], vec![1, 0, 0]]);
        assert_eq!(cm.total(), 4);
    }

    #[test]
    fn confusion_needs_mapping() {
        assert!(matches!(
            confusion_matrix(&one_hot_set(&[0], 2, "r"), &[0]),
            Err(EvalError::Unmapped { .. })
        ));
    }

    #[test]
    fn n_guess_union() {
        let labels = [0, 1, 1, 0];
        // A right on samples 1 and 2, B right on 2 and 3 (0-based 1,2 and 2,3)
        let a = identity(&[1, 1, 1, 1], 2, "a");
        let b = identity(&[1, 0, 1, 0], 2, "b");
        assert_eq!(
            n_guess_accuracy(std::slice::from_ref(&a), &labels).unwrap(),
            a.accuracy(&labels).unwrap()
        );
        assert_eq!(n_guess_accuracy(&[a, b], &labels).unwrap(), 0.75);
        assert_eq!(
            n_guess_accuracy(&[], &labels),
            Err(EvalError::EmptyEnsemble)
        );
    }

    #[test]
    fn agreement_cases() {
        let a = identity(&[0, 1, 0, 1], 2, "a");
        let b = identity(&[1, 0, 1, 0], 2, "b");
        assert_eq!(agreement_rate(&a, &a).unwrap(), 1.0);
        assert_eq!(agreement_rate(&a, &b).unwrap(), 0.0);
        let c = identity(&[0, 1], 2, "c");
        assert!(matches!(
            agreement_rate(&a, &c),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn plurality_and_ties() {
        let labels = [0];
        let sets = [
            identity(&[0], 2, "a"),
            identity(&[0], 2, "b"),
            identity(&[1], 2, "c"),
        ];
        let r = majority_vote(&sets, &labels, TieRule::default()).unwrap();
        assert_eq!(r.winners, vec![0]);
        assert_eq!(r.tallies, vec![vec![2, 1]]);
        assert!(!r.tied[0]);

        use crate::autodiff::Tensor;
        let soft = |p: f64, id: &str| {
            PredictionSet::new(Tensor::from_rows(&[vec![p, 1.0 - p]]).unwrap(), id)
                .unwrap()
                .with_mapping(vec![0, 1], 2)
                .unwrap()
        };
        let pair = [soft(0.6, "a"), soft(0.1, "b")];
        let r = majority_vote(&pair, &labels, TieRule::HighestConfidenceMember).unwrap();
        assert!(r.tied[0]);
        assert_eq!(r.winners, vec![1]);
        let r = majority_vote(&pair, &labels, TieRule::LowestMemberIndex).unwrap();
        assert_eq!(r.winners, vec![0]);
    }

    #[test]
    fn tiers_pick_top_of_each_group() {
        // accuracies 1/6 .. 6/6 with member 5 best
        let labels = [0, 0, 0, 0, 0, 0];
        let sets: Vec<PredictionSet> = (0..6)
            .map(|m| {
                let clusters: Vec<usize> = (0..6).map(|i| usize::from(i > m)).collect();
                identity(&clusters, 2, &m.to_string())
            })
            .collect();
        let t = tiered_vote(&sets, &labels, 3).unwrap();
        assert_eq!(t.ranking, vec![5, 4, 3, 2, 1, 0]);
        assert_eq!(t.delegates, vec![5, 3, 1]);

        let same: Vec<PredictionSet> = (0..3)
            .map(|m| identity(&[0, 1, 0, 0, 0, 0], 2, &m.to_string()))
            .collect();
        let t = tiered_vote(&same, &labels, 3).unwrap();
        assert_eq!(t.delegates, vec![0, 1, 2]);
        assert_eq!(
            t.vote,
            majority_vote(&same, &labels, TieRule::default()).unwrap()
        );
        assert_eq!(
            tiered_vote(&same[..2], &labels, 3),
            Err(EvalError::TooFewMembers {
                members: 2,
                tiers: 3
            })
        );
    }

    #[test]
    fn uneven_tiers_favor_top() {
        let labels = [0];
        let sets: Vec<PredictionSet> = (0..7).map(|m| identity(&[0], 2, &m.to_string())).collect();
        // sizes 3, 2, 2
        assert_eq!(
            tiered_vote(&sets, &labels, 3).unwrap().delegates,
            vec![0, 3, 5]
        );
    }

    #[test]
    fn quorum_filter() {
        let votes = |v: &[usize]| -> Vec<PredictionSet> {
            v.iter()
                .enumerate()
                .map(|(m, &c)| identity(&[c], 2, &m.to_string()))
                .collect()
        };
        assert_eq!(
            disagreement_filter(&votes(&[0, 0, 0, 1]), 0.75)
                .unwrap()
                .confident,
            vec![0]
        );
        assert_eq!(
            disagreement_filter(&votes(&[0, 0, 1, 1]), 0.75)
                .unwrap()
                .confused,
            vec![0]
        );
        assert_eq!(
            disagreement_filter(&votes(&[0, 0, 0, 1]), 1.0)
                .unwrap()
                .confused,
            vec![0]
        );
        assert_eq!(
            disagreement_filter(&votes(&[1, 1, 1, 1]), 1.0)
                .unwrap()
                .confident,
            vec![0]
        );
        assert_eq!(
            disagreement_filter(&votes(&[0]), 0.5),
            Err(EvalError::BadQuorum(0.5))
        );
    }

    #[test]
    fn combinations_enumerate() {
        assert_eq!(combinations(4, 2).len(), 6);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
        assert!(combinations(2, 3).is_empty());
    }

    #[test]
    fn top_k_rows() {
        let labels = [0, 1, 1, 0];
        let sets = [
            identity(&[1, 1, 1, 1], 2, "a"),
            identity(&[1, 0, 1, 0], 2, "b"),
            identity(&[0, 0, 0, 0], 2, "c"),
        ];
        let rows = top_k_table(&sets, &labels, &[1, 2, 3, 4]).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!((rows[0].k, rows[0].subsets), (1, 3));
        assert_eq!(rows[0].best, 0.5);
        assert_eq!(rows[1].best, 1.0);
        assert_eq!(rows[1].best_members, vec![0, 2]);
        assert_eq!(rows[2].best, 1.0);
        let single = top_k_table(&sets[..1], &labels, &[1, 2]).unwrap();
        assert_eq!(single.len(), 1);
    }
}
