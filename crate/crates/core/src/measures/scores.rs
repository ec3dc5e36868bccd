use ndarray::ArrayView2;

use crate::asr::{forward_log_likelihood, WordHmm};
use crate::numeric::log_sum_exp;
use crate::{Error, Result};

pub const DEFAULT_DISPERSION_N: usize = 5;

/// Forward log-likelihoods of every word model of one slot on one segment,
/// best first.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotScoreList {
    pub slot: usize,
    /// `(word index, ln P(O | λ))`, sorted descending; ties keep the lower index first.
    pub scores: Vec<(usize, f64)>,
    pub frames: usize,
}

impl SlotScoreList {
    /// Builds a list from unsorted scores indexed by word.
    pub fn from_scores(slot: usize, scores: &[f64], frames: usize) -> Self {
        let mut v: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self { slot, scores: v, frames }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn best(&self) -> Option<usize> {
        self.scores.first().map(|s| s.0)
    }

    pub fn score_of(&self, word: usize) -> Option<f64> {
        self.scores.iter().find(|s| s.0 == word).map(|s| s.1)
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().map(|s| s.1)
    }
}

/// Scores `obs` against each model; `models[i]` is word `i` of the slot.
pub fn score_all_models(slot: usize, models: &[&WordHmm], obs: ArrayView2<f64>) -> Result<SlotScoreList> {
    if obs.nrows() == 0 {
        return Err(Error::invalid("empty observation segment"));
    }
    let scores = models.iter().map(|h| forward_log_likelihood(h, obs)).collect::<Result<Vec<_>>>()?;
    Ok(SlotScoreList::from_scores(slot, &scores, obs.nrows()))
}

/// Mean pairwise log-likelihood ratio among the `n` best models.
pub fn dispersion(scores: &SlotScoreList, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid(format!("dispersion needs N >= 2, got {n}")));
    }
    if scores.len() < 2 {
        return Err(Error::invalid("dispersion needs at least two models"));
    }
    let n = if n > scores.len() {
        log::debug!("dispersion N = {n} exceeds slot vocabulary {}, clamping", scores.len());
        scores.len()
    } else {
        n
    };
    let top: Vec<f64> = scores.values().take(n).collect();
    let mut sum = 0.0;
    for k in 0..n {
        for l in k + 1..n {
            sum += top[k] - top[l];
        }
    }
    Ok(2.0 * sum / (n * (n - 1)) as f64)
}

/// Posterior word probabilities under uniform priors, in list order.
pub fn posteriors(scores: &SlotScoreList) -> Result<Vec<f64>> {
    let v: Vec<f64> = scores.values().collect();
    let z = log_sum_exp(&v);
    if v.is_empty() || z == f64::NEG_INFINITY {
        return Err(Error::invalid("all likelihoods are zero"));
    }
    Ok(v.iter().map(|x| (x - z).exp()).collect())
}

/// Shannon entropy of the word posterior (nats).
pub fn entropy(scores: &SlotScoreList) -> Result<f64> {
    let h: f64 = posteriors(scores)?.into_iter().filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum();
    Ok(h.max(0.0))
}

/// ln P₁ − ln P₂ of the two best models.
pub fn loglik_ratio(scores: &SlotScoreList) -> Result<f64> {
    if scores.len() < 2 {
        return Err(Error::invalid("log-likelihood ratio needs at least two models"));
    }
    Ok(scores.scores[0].1 - scores.scores[1].1)
}

/// Boundary displacement relative to the reference word length (frames).
pub fn tad(recognized: (usize, usize), reference: (usize, usize)) -> Result<f64> {
    if reference.1 <= reference.0 {
        return Err(Error::invalid("zero-length reference segment"));
    }
    let d = recognized.0.abs_diff(reference.0) + recognized.1.abs_diff(reference.1);
    Ok(d as f64 / (reference.1 - reference.0) as f64)
}

/// Margin of the true model over its best competitor per frame.
pub fn nld(scores: &SlotScoreList, true_word: usize, frames: usize) -> Result<f64> {
    if frames == 0 {
        return Err(Error::invalid("zero-length segment"));
    }
    let truth = scores
        .score_of(true_word)
        .ok_or_else(|| Error::invalid(format!("word {true_word} missing from slot {} scores", scores.slot)))?;
    let rival = scores
        .scores
        .iter()
        .filter(|s| s.0 != true_word)
        .map(|s| s.1)
        .fold(f64::NEG_INFINITY, f64::max);
    if rival == f64::NEG_INFINITY {
        return Err(Error::invalid("NLD needs at least one competitor"));
    }
    Ok((truth - rival) / frames as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(v: &[f64]) -> SlotScoreList {
        SlotScoreList::from_scores(0, v, 10)
    }

    #[test]
    fn dispersion_hand_value() {
        let s = list(&[-3.0, 0.0, -4.0, -1.0, -2.0]);
        assert_eq!(dispersion(&s, 5).unwrap(), 2.0);
        assert_eq!(dispersion(&list(&[1.0; 4]), 4).unwrap(), 0.0);
        assert_eq!(dispersion(&list(&[-5.0, -2.0]), 2).unwrap(), 3.0);
        assert!(dispersion(&s, 1).is_err());
        // clamped
        assert_eq!(dispersion(&s, 9).unwrap(), 2.0);
    }

    #[test]
    fn dispersion_can_fall_below_ratio() {
        let s = list(&[0.0, -1.0, -1.0]);
        assert_eq!(loglik_ratio(&s).unwrap(), 1.0);
        assert!((dispersion(&s, 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn entropy_values() {
        let h = entropy(&list(&[0.0; 4])).unwrap();
        assert!((h - 4f64.ln()).abs() < 1e-12);
        let ninf = f64::NEG_INFINITY;
        assert_eq!(entropy(&list(&[-3.0, ninf, ninf])).unwrap(), 0.0);
        let p = [0.5f64, 0.25, 0.125, 0.125];
        let l: Vec<f64> = p.iter().map(|x| x.ln() - 7.0).collect();
        let want: f64 = p.iter().map(|x| -x * x.ln()).sum();
        assert!((entropy(&list(&l)).unwrap() - want).abs() < 1e-12);
        assert!((want - 1.2130).abs() < 1e-4);
        assert!(entropy(&list(&[ninf, ninf])).is_err());
    }

    #[test]
    fn ratio_tad_nld() {
        assert_eq!(loglik_ratio(&list(&[-5.0, -8.0])).unwrap(), 3.0);
        assert!(loglik_ratio(&list(&[-5.0])).is_err());
        assert_eq!(tad((10, 60), (10, 60)).unwrap(), 0.0);
        assert_eq!(tad((15, 65), (10, 60)).unwrap(), 0.2);
        assert_eq!(tad((7, 37), (10, 35)).unwrap(), 0.2);
        assert!(tad((0, 5), (5, 5)).is_err());
        let s = list(&[-10.0, -6.0, -14.0]);
        assert_eq!(nld(&s, 1, 20).unwrap(), 0.2);
        assert_eq!(nld(&list(&[-6.0, -8.0]), 1, 10).unwrap(), -0.2);
        assert_eq!(nld(&list(&[-6.0, -6.0]), 0, 10).unwrap(), 0.0);
        assert!(nld(&s, 7, 20).is_err());
    }

    fn scores() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-500.0f64..0.0, 2..30)
    }

    proptest! {
        #[test]
        fn dispersion_two_is_ratio(v in scores()) {
            let s = list(&v);
            prop_assert_eq!(dispersion(&s, 2).unwrap(), loglik_ratio(&s).unwrap());
        }

        #[test]
        fn bounds_and_ordering(v in scores(), n in 2usize..8) {
            let s = list(&v);
            let d = dispersion(&s, n).unwrap();
            let l = loglik_ratio(&s).unwrap();
            let n = n.min(v.len());
            let spread = s.scores[0].1 - s.scores[n - 1].1;
            prop_assert!(l >= 0.0 && d >= 0.0 && d <= spread + 1e-9);
            let h = entropy(&s).unwrap();
            prop_assert!(h >= 0.0 && h <= (v.len() as f64).ln() + 1e-9);
        }

        #[test]
        fn shift_invariance(v in scores(), c in -1e3f64..1e3) {
            let a = list(&v);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = list(&shifted);
            prop_assert!((dispersion(&a, 5).unwrap() - dispersion(&b, 5).unwrap()).abs() < 1e-9);
            prop_assert!((loglik_ratio(&a).unwrap() - loglik_ratio(&b).unwrap()).abs() < 1e-9);
            prop_assert!((entropy(&a).unwrap() - entropy(&b).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn order_invariance(mut v in scores(), seed in any::<u64>()) {
            let a = list(&v);
            let k = (seed as usize) % v.len();
            v.rotate_left(k);
            let b = list(&v);
            let va: Vec<f64> = a.values().collect();
            let vb: Vec<f64> = b.values().collect();
            prop_assert_eq!(va, vb);
        }
    }
}
