//! Deterministic k-fold splitting.

use crate::error::Result;
use crate::input_err;
use avit_core::rng::Rng;

/// Splits `0..n` into `k` disjoint test folds with their complementary
/// training sets. Indices are shuffled by `seed`, then cut into contiguous
/// folds; the first `n mod k` folds take the extra element.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(input_err!("kfold: need at least 2 folds, got {k}"));
    }
    if k > n {
        return Err(input_err!("kfold: {k} folds but only {n} samples"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::derive_indexed(seed, &[n as u64, k as u64]).shuffle(&mut order);

    let base = n / k;
    let extra = n % k;
    let mut splits = Vec::with_capacity(k);
    let mut start = 0;
    for fold in 0..k {
        let len = base + usize::from(fold < extra);
        let test: Vec<usize> = order[start..start + len].to_vec();
        let train: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + len..])
            .copied()
            .collect();
        splits.push((train, test));
        start += len;
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn folds_are_disjoint_and_cover_everything() {
        let splits = kfold_split(10, 5, 1).unwrap();
        assert_eq!(splits.len(), 5);
        let mut seen = BTreeSet::new();
        for (train, test) in &splits {
            assert_eq!(test.len(), 2);
            assert_eq!(train.len(), 8);
            for &i in test {
                assert!(seen.insert(i), "index {i} in two test folds");
                assert!(!train.contains(&i), "index {i} leaks into its own train set");
            }
        }
        assert_eq!(seen, (0..10).collect());
    }

    #[test]
    fn remainder_spreads_over_leading_folds() {
        let sizes: Vec<usize> = kfold_split(7, 5, 3)
            .unwrap()
            .iter()
            .map(|(_, test)| test.len())
            .collect();
        assert_eq!(sizes, vec![2, 2, 1, 1, 1]);
    }

    #[test]
    fn same_seed_same_folds_different_seed_different_folds() {
        let a = kfold_split(20, 4, 9).unwrap();
        let b = kfold_split(20, 4, 9).unwrap();
        assert_eq!(a, b);
        let c = kfold_split(20, 4, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_impossible_requests() {
        assert!(kfold_split(3, 5, 0).is_err());
        assert!(kfold_split(10, 1, 0).is_err());
        assert!(kfold_split(5, 5, 0).is_ok());
    }
}
