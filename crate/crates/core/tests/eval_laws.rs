use ers_core::eval::{
    agreement_rate, confusion_matrix, disagreement_filter, hungarian_match, majority_vote,
    n_guess_accuracy, one_hot_set, TieRule,
};
use ers_core::PredictionSet;
use proptest::prelude::*;

fn brute_force(counts: &[Vec<u64>]) -> u64 {
    fn perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }
    perms(counts.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(c, &l)| counts[l][c]).sum())
        .max()
        .unwrap()
}

fn square(max_n: usize) -> impl Strategy<Value = Vec<Vec<u64>>> {
    (1..=max_n).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(0u64..40, n), n))
}

/// Member predictions as cluster ids over shared labels.
fn ensemble() -> impl Strategy<Value = (usize, Vec<usize>, Vec<Vec<usize>>)> {
    (2usize..=4, 1usize..=5, 1usize..=25).prop_flat_map(|(n, m, len)| {
        (
            Just(n),
            prop::collection::vec(0..n, len),
            prop::collection::vec(prop::collection::vec(0..n, len), m),
        )
    })
}

fn mapped(clusters: &[Vec<usize>], labels: &[usize], n: usize) -> Vec<PredictionSet> {
    clusters
        .iter()
        .enumerate()
        .map(|(i, c)| {
            one_hot_set(c, n, &format!("m{i}"))
                .mapped(labels, n)
                .unwrap()
        })
        .collect()
}

proptest! {
    #[test]
    fn hungarian_is_optimal(counts in square(6)) {
        let m = hungarian_match(&counts).unwrap();
        prop_assert_eq!(m.matched, brute_force(&counts));
        let achieved: u64 = m.permutation.iter().enumerate().map(|(c, &l)| counts[l][c]).sum();
        prop_assert_eq!(achieved, m.matched);
    }

    #[test]
    fn vote_bounded_by_n_guess((n, labels, clusters) in ensemble()) {
        let sets = mapped(&clusters, &labels, n);
        let guess = n_guess_accuracy(&sets, &labels).unwrap();
        for rule in [TieRule::HighestConfidenceMember, TieRule::LowestMemberIndex] {
            let vote = majority_vote(&sets, &labels, rule).unwrap();
            prop_assert!(vote.accuracy <= guess);
            for (w, t) in vote.winners.iter().zip(&vote.tallies) {
                prop_assert!(t.iter().all(|&x| x <= t[*w]));
            }
        }
    }

    #[test]
    fn n_guess_grows_with_members((n, labels, clusters) in ensemble()) {
        let sets = mapped(&clusters, &labels, n);
        for m in 1..sets.len() {
            prop_assert!(
                n_guess_accuracy(&sets[..m + 1], &labels).unwrap() >= n_guess_accuracy(&sets[..m], &labels).unwrap()
            );
        }
    }

    #[test]
    fn agreement_and_confusion_count((n, labels, clusters) in ensemble()) {
        let sets = mapped(&clusters, &labels, n);
        let a = &sets[0];
        let b = sets.last().unwrap();
        let (ma, mb) = (a.mapped_labels().unwrap(), b.mapped_labels().unwrap());
        let same = (0..labels.len()).filter(|&i| ma[i] == mb[i]).count() as f64 / labels.len() as f64;
        prop_assert_eq!(agreement_rate(a, b).unwrap(), same);
        prop_assert_eq!(agreement_rate(b, a).unwrap(), same);

        let cm = confusion_matrix(a, &labels).unwrap();
        for t in 0..n {
            for p in 0..n {
                let count = (0..labels.len()).filter(|&i| labels[i] == t && ma[i] == p).count() as u64;
                prop_assert_eq!(cm.counts[t][p], count);
            }
        }
        prop_assert_eq!(cm.total(), labels.len() as u64);
    }

    #[test]
    fn filter_partitions((n, labels, clusters) in ensemble(), quorum in 0.51f64..=1.0) {
        let sets = mapped(&clusters, &labels, n);
        let split = disagreement_filter(&sets, quorum).unwrap();
        let mut all: Vec<usize> = split.confident.iter().chain(&split.confused).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
    }
}
