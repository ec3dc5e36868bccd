use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seed::{hash_str, rng};
use crate::{Error, Result};

pub const DEFAULT_GROUP_SIZE: usize = 10;

/// One keyword: measure values and whether the listener got it right.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordObs {
    pub utt_id: String,
    pub values: Vec<f64>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroPoint {
    pub group: String,
    pub condition: String,
    pub snr: f64,
    /// Mean of each measure over the group's keywords.
    pub values: Vec<f64>,
    /// Fraction of the group's keywords recognized.
    pub wcs: f64,
    pub keywords: usize,
}

/// Splits the files of one condition and SNR into seeded random groups of
/// `group_size` and averages per group; a trailing partial group is dropped.
pub fn macro_average(obs: &[KeywordObs], condition: &str, snr: f64, group_size: usize, seed: u64) -> Result<Vec<MacroPoint>> {
    if group_size == 0 {
        return Err(Error::invalid("group size must be positive"));
    }
    let mut files: BTreeMap<&str, Vec<&KeywordObs>> = BTreeMap::new();
    for o in obs {
        files.entry(o.utt_id.as_str()).or_default().push(o);
    }
    if files.len() < group_size {
        return Err(Error::InsufficientData(format!(
            "{} files, need at least {group_size}",
            files.len()
        )));
    }
    let dim = obs[0].values.len();
    if obs.iter().any(|o| o.values.len() != dim) {
        return Err(Error::invalid("keyword observations differ in measure count"));
    }
    let mut ids: Vec<&str> = files.keys().copied().collect();
    ids.shuffle(&mut rng(&[seed, hash_str(condition), snr.to_bits()]));
    Ok(ids
        .chunks_exact(group_size)
        .enumerate()
        .map(|(g, chunk)| {
            let kws: Vec<&KeywordObs> = chunk.iter().flat_map(|id| files[id].iter().copied()).collect();
            let n = kws.len() as f64;
            let values = (0..dim).map(|j| kws.iter().map(|k| k.values[j]).sum::<f64>() / n).collect();
            let wcs = kws.iter().filter(|k| k.correct).count() as f64 / n;
            MacroPoint {
                group: format!("{condition}_{snr}_g{g:03}"),
                condition: condition.to_string(),
                snr,
                values,
                wcs,
                keywords: kws.len(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn files(n: usize, correct: impl Fn(usize, usize) -> bool) -> Vec<KeywordObs> {
        (0..n)
            .flat_map(|f| {
                let c = &correct;
                (0..3).map(move |k| KeywordObs {
                    utt_id: format!("u{f:03}"),
                    values: vec![f as f64, k as f64],
                    correct: c(f, k),
                })
            })
            .collect()
    }

    #[test]
    fn groups_of_ten() {
        let p = macro_average(&files(100, |_, _| true), "ssn", -4.0, 10, 1).unwrap();
        assert_eq!(p.len(), 10);
        assert!(p.iter().all(|m| m.wcs == 1.0 && m.keywords == 30));
        let p = macro_average(&files(109, |_, _| true), "ssn", -4.0, 10, 1).unwrap();
        assert_eq!(p.len(), 10);
        assert!(macro_average(&files(9, |_, _| true), "ssn", -4.0, 10, 1).is_err());
    }

    #[test]
    fn wcs_counts_keywords() {
        let obs = files(10, |f, k| (f + k) % 4 == 0);
        let expected = obs.iter().filter(|o| o.correct).count() as f64 / 30.0;
        let p = macro_average(&obs, "white", 0.0, 10, 3).unwrap();
        assert_eq!(p[0].wcs, expected);
        assert_eq!(p[0].values, vec![4.5, 1.0]);
    }

    #[test]
    fn grouping_depends_on_seed_only() {
        let obs = files(40, |f, _| f % 3 == 0);
        let a = macro_average(&obs, "ssn", 2.0, 10, 7).unwrap();
        assert_eq!(a, macro_average(&obs, "ssn", 2.0, 10, 7).unwrap());
        assert_ne!(a, macro_average(&obs, "ssn", 2.0, 10, 8).unwrap());
    }
}
