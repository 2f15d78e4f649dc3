//! Class-debt computation: split an annotation budget across classes so the
//! minimum per-class count ends up as large as possible.
//!
//! `items_per_class` solves the max-min allocation by water-filling;
//! `brute_force_items_per_class` solves it by exhaustive enumeration and
//! exists as an independent cross-check (it also backs the `bruteforce-delta`
//! CLI subcommand). The two must always agree on the objective value.

use crate::maps::ClassId;
use crate::superpixel::SuperpixelRef;

/// Per-class counts of labeled superpixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCounts(pub Vec<usize>);

/// Per-class budget shares summing to the budget they were computed for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DebtVector(pub Vec<usize>);

impl DebtVector {
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// L1-normalized debt, or `None` when the debt is all zero.
    pub fn normalized(&self) -> Option<Vec<f64>> {
        let total = self.total();
        (total > 0).then(|| self.0.iter().map(|&d| d as f64 / total as f64).collect())
    }
}

/// Histogram of labeled-set classes.
pub fn class_counts(labeled: &[(SuperpixelRef, ClassId)], num_classes: usize) -> ClassCounts {
    let mut counts = vec![0usize; num_classes];
    for &(_, class) in labeled {
        counts[class.index()] += 1;
    }
    ClassCounts(counts)
}

/// Water-filling: grant the budget one unit at a time to a class with the
/// currently lowest total, ties broken by ascending class index. This
/// maximizes `min_c (n_c + delta_c)` subject to `sum delta = budget`.
pub fn items_per_class(counts: &ClassCounts, budget: usize) -> DebtVector {
    let n = &counts.0;
    let mut delta = vec![0usize; n.len()];
    for _ in 0..budget {
        let lowest = (0..n.len())
            .min_by_key(|&c| n[c] + delta[c])
            .expect("at least one class");
        delta[lowest] += 1;
    }
    DebtVector(delta)
}

/// Exhaustive enumeration of every feasible allocation, keeping a maximizer
/// of the min objective (first in lexicographic enumeration order on ties).
/// Exponential in the class count; intended for small oracle sweeps only.
pub fn brute_force_items_per_class(counts: &ClassCounts, budget: usize) -> DebtVector {
    let n = &counts.0;
    let mut best: Option<(usize, Vec<usize>)> = None;
    let mut current = vec![0usize; n.len()];
    enumerate(n, budget, 0, &mut current, &mut best);
    DebtVector(best.expect("at least one allocation").1)
}

fn enumerate(
    n: &[usize],
    remaining: usize,
    class: usize,
    current: &mut Vec<usize>,
    best: &mut Option<(usize, Vec<usize>)>,
) {
    if class == n.len() - 1 {
        current[class] = remaining;
        let objective = n
            .iter()
            .zip(current.iter())
            .map(|(&nc, &dc)| nc + dc)
            .min()
            .unwrap();
        if best.as_ref().map_or(true, |(b, _)| objective > *b) {
            *best = Some((objective, current.clone()));
        }
        return;
    }
    for take in 0..=remaining {
        current[class] = take;
        enumerate(n, remaining - take, class + 1, current, best);
    }
}

/// The max-min objective value a debt vector achieves on top of `counts`.
pub fn min_after_allocation(counts: &ClassCounts, delta: &DebtVector) -> usize {
    counts
        .0
        .iter()
        .zip(delta.0.iter())
        .map(|(&n, &d)| n + d)
        .min()
        .expect("at least one class")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn refs(labels: &[u32]) -> Vec<(SuperpixelRef, ClassId)> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                (
                    SuperpixelRef {
                        image: 0,
                        superpixel: i,
                    },
                    ClassId(c),
                )
            })
            .collect()
    }

    #[test]
    fn class_counts_histogram() {
        assert_eq!(class_counts(&refs(&[2, 2, 0]), 3).0, vec![1, 0, 2]);
        assert_eq!(class_counts(&refs(&[]), 3).0, vec![0, 0, 0]);
        assert_eq!(class_counts(&refs(&[1; 10]), 2).0, vec![0, 10]);
    }

    #[test]
    fn water_filling_reference_cases() {
        let delta = items_per_class(&ClassCounts(vec![3, 0, 1]), 3);
        assert_eq!(delta.0, vec![0, 2, 1]);

        let delta = items_per_class(&ClassCounts(vec![0, 0, 0]), 6);
        assert_eq!(delta.0, vec![2, 2, 2]);

        // Remainder goes round-robin by ascending class index.
        let delta = items_per_class(&ClassCounts(vec![5, 5]), 3);
        assert_eq!(delta.0, vec![2, 1]);
    }

    #[test]
    fn normalized_debt() {
        assert_eq!(
            DebtVector(vec![1, 0, 3]).normalized(),
            Some(vec![0.25, 0.0, 0.75])
        );
        assert_eq!(DebtVector(vec![0, 0]).normalized(), None);
    }

    proptest! {
        #[test]
        fn matches_brute_force_objective(
            n in proptest::collection::vec(0usize..7, 1..5),
            budget in 0usize..7,
        ) {
            let counts = ClassCounts(n);
            let greedy = items_per_class(&counts, budget);
            let exhaustive = brute_force_items_per_class(&counts, budget);
            prop_assert_eq!(greedy.total(), budget);
            prop_assert_eq!(
                min_after_allocation(&counts, &greedy),
                min_after_allocation(&counts, &exhaustive)
            );
        }

        #[test]
        fn budget_grows_the_min_monotonically(
            n in proptest::collection::vec(0usize..10, 1..6),
            budget in 0usize..20,
        ) {
            let counts = ClassCounts(n);
            let a = min_after_allocation(&counts, &items_per_class(&counts, budget));
            let b = min_after_allocation(&counts, &items_per_class(&counts, budget + 1));
            prop_assert!(b >= a);
        }

        #[test]
        fn permutation_equivariant_up_to_tiebreak(
            n in proptest::collection::vec(0usize..10, 2..6),
            budget in 0usize..20,
        ) {
            // Reversal as the permutation; the objective must be identical
            // and the final per-class totals a permutation of each other.
            let counts = ClassCounts(n.clone());
            let reversed = ClassCounts(n.iter().rev().cloned().collect());
            let d = items_per_class(&counts, budget);
            let dr = items_per_class(&reversed, budget);
            let mut totals: Vec<usize> =
                n.iter().zip(d.0.iter()).map(|(a, b)| a + b).collect();
            let mut totals_r: Vec<usize> = reversed
                .0
                .iter()
                .zip(dr.0.iter())
                .map(|(a, b)| a + b)
                .collect();
            totals.sort_unstable();
            totals_r.sort_unstable();
            prop_assert_eq!(totals, totals_r);
        }
    }
}
