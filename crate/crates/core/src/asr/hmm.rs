//! Left-to-right word HMMs with entry and exit states.
//!
//! The transition matrix is `(S+2)×(S+2)`: row 0 is the non-emitting entry,
//! rows `1..=S` the emitting states, row `S+1` the non-emitting exit. Each
//! emitting state may only loop or advance by one.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::gmm::{DiagGmm, GmmParams};
use crate::error::{Error, Result};
use crate::numeric::log_add;

const NEG_INF: f64 = f64::NEG_INFINITY;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HmmParams", into = "HmmParams")]
pub struct WordHmm {
    id: String,
    log_trans: Vec<Vec<f64>>,
    states: Vec<DiagGmm>,
}

/// Serialized form; impossible transitions are `null`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HmmParams {
    pub id: String,
    #[serde(rename = "S")]
    pub n_states: usize,
    pub log_trans: Vec<Vec<Option<f64>>>,
    pub states: Vec<GmmParams>,
}

impl TryFrom<HmmParams> for WordHmm {
    type Error = Error;
    fn try_from(p: HmmParams) -> Result<Self> {
        if p.states.len() != p.n_states {
            return Err(Error::invalid(format!(
                "model `{}` declares {} states but has {}",
                p.id,
                p.n_states,
                p.states.len()
            )));
        }
        let log_trans = p
            .log_trans
            .into_iter()
            .map(|row| row.into_iter().map(|v| v.unwrap_or(NEG_INF)).collect())
            .collect();
        let states = p.states.into_iter().map(DiagGmm::try_from).collect::<Result<Vec<_>>>()?;
        WordHmm::new(p.id, log_trans, states)
    }
}

impl From<WordHmm> for HmmParams {
    fn from(h: WordHmm) -> Self {
        HmmParams {
            n_states: h.states.len(),
            id: h.id,
            log_trans: h
                .log_trans
                .into_iter()
                .map(|row| row.into_iter().map(|v| v.is_finite().then_some(v)).collect())
                .collect(),
            states: h.states.into_iter().map(GmmParams::from).collect(),
        }
    }
}

impl WordHmm {
    pub fn new(id: impl Into<String>, log_trans: Vec<Vec<f64>>, states: Vec<DiagGmm>) -> Result<Self> {
        let id = id.into();
        let s = states.len();
        let bad = |m: String| Err(Error::invalid(format!("model `{id}`: {m}")));
        if s == 0 {
            return bad("needs at least one emitting state".into());
        }
        if log_trans.len() != s + 2 || log_trans.iter().any(|r| r.len() != s + 2) {
            return bad(format!("transition matrix must be {0}x{0}", s + 2));
        }
        let dim = states[0].dim();
        if states.iter().any(|g| g.dim() != dim) {
            return bad("states disagree on feature dimension".into());
        }
        for (i, row) in log_trans.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let allowed = (i == 0 && j == 1) || (1..=s).contains(&i) && (j == i || j == i + 1);
                if !allowed && v != NEG_INF {
                    return bad(format!("transition {i}->{j} is not left-to-right"));
                }
                if v.is_nan() || v > 1e-12 {
                    return bad(format!("transition {i}->{j} is not a log probability"));
                }
            }
            if i <= s {
                let total: f64 = row.iter().map(|v| v.exp()).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return bad(format!("row {i} sums to {total}"));
                }
            }
        }
        Ok(Self { id, log_trans, states })
    }

    /// Builds the standard topology from per-state self-loop probabilities.
    pub fn left_to_right(id: impl Into<String>, states: Vec<DiagGmm>, self_loops: &[f64]) -> Result<Self> {
        let s = states.len();
        if self_loops.len() != s || self_loops.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::invalid("self-loop probabilities must lie in [0, 1), one per state"));
        }
        let mut t = vec![vec![NEG_INF; s + 2]; s + 2];
        t[0][1] = 0.0;
        for (i, &p) in self_loops.iter().enumerate() {
            t[i + 1][i + 1] = p.ln();
            t[i + 1][i + 2] = (1.0 - p).ln();
        }
        Self::new(id, t, states)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn states(&self) -> &[DiagGmm] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &DiagGmm {
        &self.states[i]
    }

    pub fn log_trans(&self) -> &[Vec<f64>] {
        &self.log_trans
    }

    /// ln a_ii of emitting state `i` (0-based).
    pub fn log_self(&self, i: usize) -> f64 {
        self.log_trans[i + 1][i + 1]
    }

    /// ln a_{i,i+1} of emitting state `i` (0-based); for the last state this is the exit.
    pub fn log_next(&self, i: usize) -> f64 {
        self.log_trans[i + 1][i + 2]
    }

    pub fn log_entry(&self) -> f64 {
        self.log_trans[0][1]
    }

    /// `T × S` matrix of state log-densities.
    pub fn emissions(&self, obs: ArrayView2<f64>) -> Result<Vec<Vec<f64>>> {
        if obs.ncols() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: obs.ncols(),
            });
        }
        Ok(obs
            .rows()
            .into_iter()
            .map(|row| {
                let x = row.to_vec();
                self.states.iter().map(|g| g.log_pdf_unchecked(&x)).collect()
            })
            .collect())
    }

    /// Forward recursion over precomputed emissions, ending in the last
    /// emitting state (the exit transition is not applied).
    pub fn forward_from_emissions(&self, b: &[Vec<f64>]) -> f64 {
        let s = self.n_states();
        if b.len() < s {
            return NEG_INF;
        }
        let mut alpha = vec![NEG_INF; s];
        alpha[0] = self.log_entry() + b[0][0];
        let mut next = vec![NEG_INF; s];
        for bt in &b[1..] {
            for j in 0..s {
                let stay = alpha[j] + self.log_self(j);
                let adv = if j > 0 { alpha[j - 1] + self.log_next(j - 1) } else { NEG_INF };
                next[j] = log_add(stay, adv) + bt[j];
            }
            std::mem::swap(&mut alpha, &mut next);
        }
        alpha[s - 1]
    }

    /// Best state path (0-based emitting states) and its log-likelihood,
    /// under the same start/end convention as the forward pass. Ties prefer
    /// staying in the lower state.
    pub fn viterbi_from_emissions(&self, b: &[Vec<f64>]) -> (f64, Vec<usize>) {
        let s = self.n_states();
        let t_len = b.len();
        if t_len < s {
            return (NEG_INF, Vec::new());
        }
        let mut delta = vec![NEG_INF; s];
        delta[0] = self.log_entry() + b[0][0];
        let mut back = vec![vec![0usize; s]; t_len];
        let mut next = vec![NEG_INF; s];
        for t in 1..t_len {
            for j in 0..s {
                let adv = if j > 0 { delta[j - 1] + self.log_next(j - 1) } else { NEG_INF };
                let stay = delta[j] + self.log_self(j);
                let (v, from) = if adv > stay { (adv, j - 1) } else { (stay, j) };
                next[j] = v + b[t][j];
                back[t][j] = from;
            }
            std::mem::swap(&mut delta, &mut next);
        }
        let score = delta[s - 1];
        if score == NEG_INF {
            return (score, Vec::new());
        }
        let mut path = vec![s - 1; t_len];
        for t in (1..t_len).rev() {
            path[t - 1] = back[t][path[t]];
        }
        (score, path)
    }
}

/// ln P(O | λ) by the forward algorithm; `-inf` when the segment is shorter than S.
pub fn forward_log_likelihood(hmm: &WordHmm, obs: ArrayView2<f64>) -> Result<f64> {
    if obs.nrows() == 0 {
        return Err(Error::invalid("empty observation segment"));
    }
    Ok(hmm.forward_from_emissions(&hmm.emissions(obs)?))
}

/// Best single-path log-likelihood.
pub fn viterbi_log_likelihood(hmm: &WordHmm, obs: ArrayView2<f64>) -> Result<f64> {
    if obs.nrows() == 0 {
        return Err(Error::invalid("empty observation segment"));
    }
    Ok(hmm.viterbi_from_emissions(&hmm.emissions(obs)?).0)
}
