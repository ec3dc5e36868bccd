//! Cross-validation plans and summaries.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io;
use crate::seed::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvPlan {
    pub k: usize,
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        Self {
            k: 7,
            train: 0.70,
            valid: 0.15,
            test: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl CvPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Error::Config {
            field: format!("mapping.cv.{field}"),
            message: message.into(),
        };
        if self.k < 2 {
            return Err(bad("k", "need at least 2 folds"));
        }
        if [self.train, self.valid, self.test].iter().any(|f| !(*f > 0.0)) || ((self.train + self.valid + self.test) - 1.0).abs() > 1e-9 {
            return Err(bad("train", "fractions must be positive and sum to 1"));
        }
        if self.test * self.k as f64 + 1e-9 < 1.0 {
            return Err(bad("test", "k test windows must cover the data"));
        }
        Ok(())
    }

    /// Folds over `n` records. Records are shuffled once; fold `i` takes its
    /// test window at offset `i·n/k` of the shuffled order and the validation
    /// window right after it (both wrapping), so every record is tested at
    /// least once and the three parts of a fold are disjoint. Test windows are
    /// stretched to `⌈n/k⌉` when the test fraction alone would leave gaps.
    pub fn folds(&self, n: usize) -> Result<Vec<Fold>> {
        self.validate()?;
        let nt = ((n as f64 * self.test).round() as usize).max(n.div_ceil(self.k));
        let nv = (n as f64 * self.valid).round() as usize;
        if nt == 0 || nv == 0 || nt + nv >= n {
            return Err(Error::InsufficientData(format!("{n} records are too few for {} folds", self.k)));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng(&[self.seed, 0x4356]));
        Ok((0..self.k)
            .map(|i| {
                let start = i * n / self.k;
                let at = |j: usize| order[(start + j) % n];
                Fold {
                    index: i,
                    test: (0..nt).map(at).collect(),
                    valid: (nt..nt + nv).map(at).collect(),
                    train: (nt + nv..n).map(at).collect(),
                }
            })
            .collect())
    }
}

/// Mean and normal-approximation 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci95: f64,
}

impl MeanCi {
    pub fn of(values: &[f64]) -> Self {
        let k = values.len() as f64;
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                ci95: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / k;
        let ci95 = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
            1.96 * (var / k).sqrt()
        } else {
            0.0
        };
        Self { mean, ci95 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    /// Metrics of each fold, in fold order.
    pub folds: Vec<BTreeMap<String, f64>>,
    pub summary: BTreeMap<String, MeanCi>,
}

/// Runs `eval` on each fold (in parallel) and summarizes every metric it returns.
pub fn run_cv<F>(n: usize, plan: &CvPlan, eval: F) -> Result<CvResult>
where
    F: Fn(&Fold) -> Result<BTreeMap<String, f64>> + Sync,
{
    let folds = plan.folds(n)?;
    let per_fold = folds.par_iter().map(&eval).collect::<Result<Vec<_>>>()?;
    let mut keys: Vec<&String> = per_fold.iter().flat_map(|m| m.keys()).collect();
    keys.sort();
    keys.dedup();
    let summary = keys
        .into_iter()
        .map(|k| {
            let v: Vec<f64> = per_fold.iter().filter_map(|m| m.get(k).copied()).collect();
            (k.clone(), MeanCi::of(&v))
        })
        .collect();
    Ok(CvResult { folds: per_fold, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub fold: String,
    pub measure: String,
    pub condition: String,
    pub metric: String,
    pub value: f64,
}

impl CvResult {
    /// Rows for the CV report: one per fold and metric, then `mean` and `ci95`.
    pub fn rows(&self, measure: &str, condition: &str) -> Vec<CvRow> {
        let row = |fold: String, metric: &str, value: f64| CvRow {
            fold,
            measure: measure.into(),
            condition: condition.into(),
            metric: metric.into(),
            value,
        };
        let mut out: Vec<CvRow> = self
            .folds
            .iter()
            .enumerate()
            .flat_map(|(i, m)| m.iter().map(move |(k, v)| (i, k, *v)))
            .map(|(i, k, v)| row(i.to_string(), k, v))
            .collect();
        for (k, s) in &self.summary {
            out.push(row("mean".into(), k, s.mean));
            out.push(row("ci95".into(), k, s.ci95));
        }
        out
    }
}

pub fn write_cv_rows(path: impl AsRef<Path>, rows: &[CvRow]) -> Result<()> {
    io::write_csv(path.as_ref(), rows)
}

pub fn read_cv_rows(path: impl AsRef<Path>) -> Result<Vec<CvRow>> {
    io::read_csv(path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seven_folds_of_seven_hundred() {
        let folds = CvPlan::default().folds(700).unwrap();
        assert_eq!(folds.len(), 7);
        for f in &folds {
            assert_eq!(f.test.len(), 105);
            assert_eq!(f.valid.len(), 105);
            assert_eq!(f.train.len(), 490);
        }
    }

    #[test]
    fn summary_mean_is_fold_average() {
        let r = run_cv(70, &CvPlan::default(), |f| {
            Ok(BTreeMap::from([("acc".to_string(), f.index as f64)]))
        })
        .unwrap();
        assert_eq!(r.summary["acc"].mean, 3.0);
        let ci = 1.96 * (28.0 / 6.0 / 7.0f64).sqrt();
        assert!((r.summary["acc"].ci95 - ci).abs() < 1e-12);
        let rows = r.rows("D", "ssn");
        assert_eq!(rows.len(), 9);
        assert_eq!(rows[7].fold, "mean");
    }

    #[test]
    fn duplicated_data_keeps_fold_proportions() {
        // fold accuracy of a fixed rule on doubled data matches the
        // proportion of the original records it selects
        let labels: Vec<bool> = (0..140).map(|i| i % 3 != 0).collect();
        let doubled: Vec<bool> = labels.iter().chain(&labels).copied().collect();
        let rule = |l: &[bool], f: &Fold| {
            let hits = f.test.iter().filter(|&&i| l[i]).count() as f64;
            Ok(BTreeMap::from([("acc".to_string(), hits / f.test.len() as f64)]))
        };
        let a = run_cv(140, &CvPlan::default(), |f| rule(&labels, f)).unwrap();
        let b = run_cv(280, &CvPlan::default(), |f| rule(&doubled, f)).unwrap();
        let overall = labels.iter().filter(|&&x| x).count() as f64 / 140.0;
        for r in [a, b] {
            assert!((r.summary["acc"].mean - overall).abs() < 0.1);
        }
    }

    #[test]
    fn rejects_tiny_data() {
        assert!(CvPlan::default().folds(3).is_err());
        let bad = CvPlan { k: 1, ..CvPlan::default() };
        assert!(bad.folds(100).is_err());
    }

    proptest! {
        #[test]
        fn folds_are_disjoint_and_cover(n in 20usize..400, seed in any::<u64>()) {
            let plan = CvPlan { seed, ..CvPlan::default() };
            let folds = plan.folds(n).unwrap();
            let mut tested = vec![false; n];
            for f in &folds {
                let mut all: Vec<usize> = f.train.iter().chain(&f.valid).chain(&f.test).copied().collect();
                all.sort();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                for &i in &f.test {
                    tested[i] = true;
                }
            }
            prop_assert!(tested.iter().all(|&t| t));
        }
    }
}
