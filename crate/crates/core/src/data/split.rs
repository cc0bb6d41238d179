//! Frame sampling and cross-validation fold assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Row indices `floor(i * T / k)` for `i in 0..k`.
///
/// Indices are nondecreasing and below `T`; when `k > T` rows repeat in order.
pub fn frame_indices(t: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| i * t / k).collect()
}

/// Picks `k` uniformly strided rows of a T×d frame matrix.
pub fn sample_frames(frames: &Matrix, k: usize) -> Result<Matrix> {
    if k == 0 {
        return Err(Error::Config("frame count must be >= 1".into()));
    }
    frames.select_rows(&frame_indices(frames.rows(), k))
}

/// Fold id for each of `n` items: seeded shuffle, then round-robin.
///
/// Fold sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::Config(format!("{n} samples cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &item) in order.iter().enumerate() {
        assignment[item] = pos % k;
    }
    Ok(assignment)
}

/// Groups item indices by fold id.
pub fn fold_members(assignment: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut folds = vec![Vec::new(); k];
    for (item, &f) in assignment.iter().enumerate() {
        folds[f].push(item);
    }
    folds
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frame_sampling_examples() {
        assert_eq!(frame_indices(15, 15), (0..15).collect::<Vec<_>>());
        assert_eq!(frame_indices(30, 15), (0..15).map(|i| 2 * i).collect::<Vec<_>>());
        let idx = frame_indices(4, 15);
        assert_eq!(idx, vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3]);

        let m = Matrix::from_fn(30, 2, |i, j| (i * 10 + j) as f64);
        let s = sample_frames(&m, 15).unwrap();
        assert_eq!(s.rows(), 15);
        assert_eq!(s.row(3), &[60.0, 61.0]);
        let same = Matrix::from_fn(15, 2, |i, j| (i + j) as f64);
        assert_eq!(sample_frames(&same, 15).unwrap(), same);
        assert!(sample_frames(&same, 0).is_err());
    }

    #[test]
    fn kfold_examples() {
        let a = kfold_split(20, 10, 1).unwrap();
        assert!(fold_members(&a, 10).iter().all(|f| f.len() == 2));

        let a = kfold_split(23, 10, 1).unwrap();
        let mut sizes: Vec<usize> = fold_members(&a, 10).iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 2, 2, 2, 3, 3, 3]);

        assert_eq!(kfold_split(50, 5, 9).unwrap(), kfold_split(50, 5, 9).unwrap());
        assert_ne!(kfold_split(50, 5, 9).unwrap(), kfold_split(50, 5, 10).unwrap());
        assert!(matches!(kfold_split(3, 5, 0), Err(Error::Config(_))));
        assert!(kfold_split(3, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn frame_indices_are_ordered_and_in_range(t in 1usize..100, k in 1usize..60) {
            let idx = frame_indices(t, k);
            prop_assert_eq!(idx.len(), k);
            prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(idx.iter().all(|&i| i < t));
            if k >= t {
                // every frame is used at least once
                let mut u = idx.clone();
                u.dedup();
                prop_assert_eq!(u.len(), t);
            }
        }

        #[test]
        fn kfold_is_balanced_partition(n in 2usize..300, k in 2usize..20, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let a = kfold_split(n, k, seed).unwrap();
            let folds = fold_members(&a, k);
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let max = folds.iter().map(Vec::len).max().unwrap();
            let min = folds.iter().map(Vec::len).min().unwrap();
            prop_assert!(max - min <= 1);
        }
    }
}
