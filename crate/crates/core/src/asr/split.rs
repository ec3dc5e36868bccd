use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Index sets of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded k-fold partition of `0..n`. Fold `f` tests on part `f`, uses part
/// `(f+1) mod k` for development and the rest for training (60/20/20 at k = 5).
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::invalid("k-fold split needs k >= 2"));
    }
    if n < k {
        return Err(Error::InsufficientData(format!("{n} items cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(&[seed, 0xF01D]));
    let mut parts = vec![Vec::new(); k];
    for (pos, &i) in order.iter().enumerate() {
        parts[pos % k].push(i);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok((0..k)
        .map(|f| {
            let dev_part = if k > 2 { Some((f + 1) % k) } else { None };
            let mut train: Vec<usize> = (0..k)
                .filter(|&p| p != f && Some(p) != dev_part)
                .flat_map(|p| parts[p].iter().copied())
                .collect();
            train.sort_unstable();
            FoldSplit {
                fold: f,
                train,
                dev: dev_part.map(|p| parts[p].clone()).unwrap_or_default(),
                test: parts[f].clone(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_records_five_folds() {
        let s = kfold_split(100, 5, 1).unwrap();
        let mut all: Vec<usize> = Vec::new();
        for f in &s {
            assert_eq!(f.test.len(), 20);
            assert_eq!(f.dev.len(), 20);
            assert_eq!(f.train.len(), 60);
            for i in &f.test {
                assert!(!f.train.contains(i) && !f.dev.contains(i));
            }
            all.extend(&f.test);
        }
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, kfold_split(100, 5, 1).unwrap());
        assert_ne!(s, kfold_split(100, 5, 2).unwrap());
        assert!(kfold_split(100, 1, 1).is_err());
    }
}
