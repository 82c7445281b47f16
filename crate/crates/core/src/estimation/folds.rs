use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from;

/// Assignment of `n` rows to `k` folds.
///
/// `k = 1` means no cross-fitting: nuisances are trained and evaluated on
/// the same rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub assignment: Vec<usize>,
}

/// Seeded uniform partition: rows are shuffled and the row at shuffled
/// position `j` goes to fold `j mod k`, so fold sizes differ by at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 || k > n {
        return Err(Error::Argument(format!("fold count must be in 1..={n}, got {k}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed));
    let mut assignment = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = pos % k;
    }
    Ok(FoldPlan {
        n,
        k,
        seed,
        assignment,
    })
}

impl FoldPlan {
    pub fn cross_fitted(&self) -> bool {
        self.k > 1
    }

    pub fn fold_of(&self, row: usize) -> usize {
        self.assignment[row]
    }

    /// Rows evaluated with fold `fold`'s nuisances.
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.assignment[i] == fold).collect()
    }

    /// Rows the nuisances of fold `fold` are trained on.
    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        if !self.cross_fitted() {
            return (0..self.n).collect();
        }
        (0..self.n).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.assignment {
            s[f] += 1;
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(make_folds(10, 5, 1).unwrap().sizes(), vec![2; 5]);
        let mut s = make_folds(7, 3, 1).unwrap().sizes();
        s.sort_unstable();
        assert_eq!(s, vec![2, 2, 3]);
    }

    #[test]
    fn deterministic_and_bounded() {
        assert_eq!(make_folds(50, 4, 9).unwrap(), make_folds(50, 4, 9).unwrap());
        assert_ne!(make_folds(50, 4, 9).unwrap(), make_folds(50, 4, 10).unwrap());
        assert!(make_folds(3, 4, 0).is_err());
        assert!(make_folds(3, 0, 0).is_err());
        let one = make_folds(5, 1, 0).unwrap();
        assert_eq!(one.train_rows(0), one.test_rows(0));
    }
}
