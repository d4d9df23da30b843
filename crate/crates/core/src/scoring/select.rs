use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::trajlog::{Coreset, ScoreTable};

/// Number of samples kept at pruning rate `p`: `max(1, round((1 - p) * n))`,
/// rounding half away from zero.
pub fn kept_count(n: usize, pruning_rate: f64) -> usize {
    let m = ((1.0 - pruning_rate) * n as f64).round() as usize;
    m.clamp(1, n.max(1))
}

/// Keeps the highest-scoring samples. Ties go to the lower index; the
/// returned indices are ascending and carry their raw scores as weights.
pub fn select_top_m(table: &ScoreTable, pruning_rate: f64) -> Result<Coreset> {
    if !(pruning_rate > 0.0 && pruning_rate < 1.0) {
        return Err(Error::param(format!("pruning rate {pruning_rate} outside (0, 1)")));
    }
    table.validate()?;
    let n = table.scores.len();
    if n == 0 {
        return Err(Error::param("cannot select from an empty score table"));
    }
    let m = kept_count(n, pruning_rate);
    let scores = &table.scores;
    let order = top_m_indices(scores, m);
    Ok(Coreset {
        n_total: n as u64,
        weights: order.iter().map(|&i| scores[i]).collect(),
        indices: order.into_iter().map(|i| i as u64).collect(),
        pruning_rate: pruning_rate as f32,
    })
}

/// Indices of the `m` highest scores in ascending index order, ties to the
/// lower index. `m` is clamped to `scores.len()`.
pub fn top_m_indices(scores: &[f64], m: usize) -> Vec<usize> {
    let n = scores.len();
    let m = m.min(n);
    if m == 0 {
        return Vec::new();
    }
    // Strict total order: score descending, then index ascending.
    let rank = |a: &usize, b: &usize| -> Ordering { scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)) };
    let mut order: Vec<usize> = (0..n).collect();
    if m < n {
        order.select_nth_unstable_by(m - 1, rank);
        order.truncate(m);
    }
    order.sort_unstable();
    order
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::trajlog::{Method, ScoreParams};

    fn table(scores: Vec<f64>) -> ScoreTable {
        ScoreTable {
            method: Method::Tdds,
            params: ScoreParams {
                epochs: 2,
                window: 1,
                beta: 0.9,
            },
            scores,
        }
    }

    #[test]
    fn keeps_highest() {
        let c = select_top_m(&table(vec![3.0, 1.0, 2.0]), 1.0 / 3.0).unwrap();
        assert_eq!(c.indices, vec![0, 2]);
        assert_eq!(c.weights, vec![3.0, 2.0]);
        assert_eq!(c.n_total, 3);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let c = select_top_m(&table(vec![1.0; 4]), 0.5).unwrap();
        assert_eq!(c.indices, vec![0, 1]);
    }

    #[test]
    fn single_sample_is_kept() {
        let c = select_top_m(&table(vec![0.3]), 0.9).unwrap();
        assert_eq!(c.indices, vec![0]);
        assert_eq!(kept_count(10, 0.96), 1);
        assert_eq!(kept_count(10, 0.95), 1);
        assert_eq!(kept_count(10, 0.85), 2);
    }

    #[test]
    fn rejects_bad_rate() {
        assert!(select_top_m(&table(vec![1.0]), 0.0).is_err());
        assert!(select_top_m(&table(vec![1.0]), 1.0).is_err());
    }

    fn brute_force(scores: &[f64], m: usize) -> Vec<u64> {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let mut keep: Vec<u64> = idx[..m].iter().map(|&i| i as u64).collect();
        keep.sort();
        keep
    }

    proptest! {
        #[test]
        fn matches_full_sort(
            scores in proptest::collection::vec(-4i32..4, 1..60),
            p in 0.01f64..0.99,
        ) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let c = select_top_m(&table(scores.clone()), p).unwrap();
            prop_assert_eq!(&c.indices, &brute_force(&scores, kept_count(scores.len(), p)));
        }

        #[test]
        fn membership_invariant_under_monotone_map(
            scores in proptest::collection::vec(-10.0f64..10.0, 1..60),
            p in 0.01f64..0.99,
        ) {
            let mapped: Vec<f64> = scores.iter().map(|s| (s / 4.0).exp() * 3.0 - 1.0).collect();
            let a = select_top_m(&table(scores), p).unwrap();
            let b = select_top_m(&table(mapped), p).unwrap();
            prop_assert_eq!(a.indices, b.indices);
        }
    }
}
