use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmParams", into = "GmmParams")]
pub struct DiagGmm {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
    /// ln w_m − ½ Σ_d ln(2π σ²_md)
    consts: Vec<f64>,
    inv_vars: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
}

impl TryFrom<GmmParams> for DiagGmm {
    type Error = Error;
    fn try_from(p: GmmParams) -> Result<Self> {
        DiagGmm::new(p.weights, p.means, p.vars)
    }
}

impl From<DiagGmm> for GmmParams {
    fn from(g: DiagGmm) -> Self {
        GmmParams {
            weights: g.weights,
            means: g.means,
            vars: g.vars,
        }
    }
}

impl DiagGmm {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, vars: Vec<Vec<f64>>) -> Result<Self> {
        let m = weights.len();
        if m == 0 || means.len() != m || vars.len() != m {
            return Err(Error::invalid("mixture needs matching, non-empty weights/means/vars"));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().chain(&vars).any(|v| v.len() != dim) {
            return Err(Error::invalid("mixture components must share a non-zero dimension"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("mixture weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("mixture weights sum to {total}")));
        }
        if vars.iter().flatten().any(|v| !(v.is_finite() && *v > 0.0)) || means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mixture means must be finite and variances positive"));
        }
        let consts = weights
            .iter()
            .zip(&vars)
            .map(|(w, v)| w.ln() - 0.5 * v.iter().map(|s| LN_2PI + s.ln()).sum::<f64>())
            .collect();
        let inv_vars = vars.iter().map(|v| v.iter().map(|s| 1.0 / s).collect()).collect();
        Ok(Self {
            weights,
            means,
            vars,
            consts,
            inv_vars,
        })
    }

    pub fn single(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![var])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn vars(&self) -> &[Vec<f64>] {
        &self.vars
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.log_pdf_unchecked(x))
    }

    /// Per-component `ln w_m + ln N(x; μ_m, Σ_m)`.
    pub(crate) fn component_log_probs(&self, x: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate().take(self.weights.len()) {
            let mu = &self.means[m];
            let iv = &self.inv_vars[m];
            let mut q = 0.0;
            for d in 0..x.len() {
                let z = x[d] - mu[d];
                q += z * z * iv[d];
            }
            *o = self.consts[m] - 0.5 * q;
        }
    }

    pub(crate) fn log_pdf_unchecked(&self, x: &[f64]) -> f64 {
        let mut buf = [0.0; 8];
        if self.weights.len() <= buf.len() {
            let k = self.weights.len();
            self.component_log_probs(x, &mut buf[..k]);
            log_sum_exp(&buf[..k])
        } else {
            let mut v = vec![0.0; self.weights.len()];
            self.component_log_probs(x, &mut v);
            log_sum_exp(&v)
        }
    }

    /// Doubles the component count by moving each mean ±`factor`·σ.
    pub fn split(&self, factor: f64) -> DiagGmm {
        let mut w = Vec::new();
        let mut mu = Vec::new();
        let mut var = Vec::new();
        for m in 0..self.n_components() {
            for sign in [1.0, -1.0] {
                w.push(self.weights[m] / 2.0);
                mu.push(
                    self.means[m]
                        .iter()
                        .zip(&self.vars[m])
                        .map(|(u, v)| u + sign * factor * v.sqrt())
                        .collect(),
                );
                var.push(self.vars[m].clone());
            }
        }
        DiagGmm::new(w, mu, var).expect("split of a valid mixture is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn single_component_at_mode() {
        let var = vec![0.5, 2.0, 1.5];
        let g = DiagGmm::single(vec![1.0, -2.0, 0.3], var.clone()).unwrap();
        let expect: f64 = -0.5 * var.iter().map(|v| (2.0 * std::f64::consts::PI * v).ln()).sum::<f64>();
        assert!((g.log_pdf(&[1.0, -2.0, 0.3]).unwrap() - expect).abs() < 1e-12);
        assert!(g.log_pdf(&[1.0]).is_err());
    }

    #[test]
    fn identical_components_collapse() {
        let mu = vec![0.2, 0.4];
        let var = vec![1.1, 0.9];
        let one = DiagGmm::single(mu.clone(), var.clone()).unwrap();
        let two = DiagGmm::new(vec![0.5, 0.5], vec![mu.clone(), mu], vec![var.clone(), var]).unwrap();
        let x = [0.7, -0.3];
        assert!((one.log_pdf(&x).unwrap() - two.log_pdf(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn matches_probability_domain_sum() {
        let mut r = crate::seed::rng(&[11]);
        for _ in 0..50 {
            let d = 4;
            let w0: f64 = r.random_range(0.1..0.9);
            let means: Vec<Vec<f64>> = (0..2).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            let vars: Vec<Vec<f64>> = (0..2).map(|_| (0..d).map(|_| r.random_range(0.3..2.0)).collect()).collect();
            let g = DiagGmm::new(vec![w0, 1.0 - w0], means.clone(), vars.clone()).unwrap();
            let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
            let direct: f64 = [w0, 1.0 - w0]
                .iter()
                .enumerate()
                .map(|(m, w)| {
                    let mut p = *w;
                    for k in 0..d {
                        let v = vars[m][k];
                        p *= (-(x[k] - means[m][k]).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
                    }
                    p
                })
                .sum();
            let got = g.log_pdf(&x).unwrap().exp();
            assert!((got - direct).abs() <= 1e-10 * direct);
        }
    }

    #[test]
    fn split_moves_means() {
        let g = DiagGmm::single(vec![0.0, 1.0], vec![4.0, 1.0]).unwrap();
        let s = g.split(0.2);
        assert_eq!(s.n_components(), 2);
        assert_eq!(s.means()[0], vec![0.4, 1.2]);
        assert_eq!(s.means()[1], vec![-0.4, 0.8]);
        assert_eq!(s.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn serde_round_trip() {
        let g = DiagGmm::new(vec![0.3, 0.7], vec![vec![1.0], vec![2.0]], vec![vec![0.5], vec![0.25]]).unwrap();
        let back: DiagGmm = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(g, back);
        assert!(serde_json::from_str::<DiagGmm>(r#"{"weights":[1.0],"means":[[0.0]],"vars":[[0.0]]}"#).is_err());
    }
}
