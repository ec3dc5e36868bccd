use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsychometricCurve {
    pub srt_db: f64,
    /// Logistic rate (1/dB).
    pub slope: f64,
    /// RMS residual of the fit.
    pub residual: f64,
}

impl PsychometricCurve {
    pub fn eval(&self, snr: f64) -> f64 {
        logistic(self.slope * (snr - self.srt_db))
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn sse(points: &[(f64, f64)], m: f64, k: f64) -> f64 {
    points.iter().map(|&(x, y)| (logistic(k * (x - m)) - y).powi(2)).sum()
}

/// Per-SNR mean scores in ascending SNR order.
fn means(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut by: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for &(x, y) in points {
        // order-preserving key for finite floats
        let bits = x.to_bits();
        let key = if x >= 0.0 { bits | (1 << 63) } else { !bits };
        let e = by.entry(key).or_insert((x, 0.0, 0));
        e.1 += y;
        e.2 += 1;
    }
    by.into_values().map(|(x, s, n)| (x, s / n as f64)).collect()
}

fn levenberg_marquardt(points: &[(f64, f64)], mut m: f64, mut k: f64) -> (f64, f64, f64) {
    let mut cost = sse(points, m, k);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(x, y) in points {
            let s = logistic(k * (x - m));
            let d = s * (1.0 - s);
            let jm = -k * d;
            let jk = (x - m) * d;
            let r = s - y;
            a11 += jm * jm;
            a12 += jm * jk;
            a22 += jk * jk;
            g1 += jm * r;
            g2 += jk * r;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let b11 = a11 * (1.0 + lambda);
            let b22 = a22 * (1.0 + lambda);
            let det = b11 * b22 - a12 * a12;
            if det.abs() < 1e-300 {
                lambda *= 10.0;
                continue;
            }
            let dm = -(b22 * g1 - a12 * g2) / det;
            let dk = -(b11 * g2 - a12 * g1) / det;
            let c = sse(points, m + dm, k + dk);
            if c.is_finite() && c <= cost {
                let small = dm.abs() < 1e-13 * (1.0 + m.abs()) && dk.abs() < 1e-13 * (1.0 + k.abs());
                m += dm;
                k += dk;
                let gain = cost - c;
                cost = c;
                lambda = (lambda / 10.0).max(1e-15);
                improved = !small && gain > 1e-30;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (m, k, cost)
}

/// Least-squares fit of `wcs ≈ 1 / (1 + exp(−slope·(snr − srt)))`.
pub fn fit_psychometric(points: &[(f64, f64)]) -> Result<PsychometricCurve> {
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("psychometric data".into()));
    }
    let mean = means(points);
    if mean.len() < 4 {
        return Err(Error::InsufficientData(format!("{} distinct SNRs, need 4", mean.len())));
    }
    let lo = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if !(lo <= 0.5 && hi >= 0.5 && lo < hi) {
        return Err(Error::SrtOutOfRange(format!(
            "scores span [{lo:.3}, {hi:.3}] and do not straddle 0.5"
        )));
    }
    let (xmin, xmax) = (mean[0].0, mean[mean.len() - 1].0);
    let m0 = crossing(&mean).unwrap_or(0.5 * (xmin + xmax));
    let span = (xmax - xmin).max(1e-6);
    let best = [0.5, 2.0, 8.0, 32.0]
        .iter()
        .map(|c| levenberg_marquardt(points, m0, c / span))
        .filter(|r| r.0.is_finite() && r.1.is_finite())
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .ok_or_else(|| Error::DegenerateFit("no finite solution".into()))?;
    let (srt, slope, cost) = best;
    if !(slope > 0.0) {
        return Err(Error::DegenerateFit(format!("non-increasing fit (slope {slope})")));
    }
    if srt < xmin || srt > xmax {
        return Err(Error::SrtOutOfRange(format!("fitted SRT {srt:.2} dB outside [{xmin}, {xmax}] dB")));
    }
    Ok(PsychometricCurve {
        srt_db: srt,
        slope,
        residual: (cost / points.len() as f64).sqrt(),
    })
}

/// SNR where the per-SNR means first rise through 0.5, by linear interpolation.
fn crossing(mean: &[(f64, f64)]) -> Option<f64> {
    mean.windows(2).find(|w| w[0].1 < 0.5 && w[1].1 >= 0.5).map(|w| {
        let t = (0.5 - w[0].1) / (w[1].1 - w[0].1);
        w[0].0 + t * (w[1].0 - w[0].0)
    })
}

/// SRT from scores that flatten out away from the threshold (guessing,
/// lapses): the plain logistic is fitted only to the `window` distinct SNRs
/// around the first upward 0.5 crossing of the per-SNR means.
pub fn fit_straddling(points: &[(f64, f64)], window: usize) -> Result<PsychometricCurve> {
    let mean = means(points);
    let window = window.max(4);
    if mean.len() < window {
        return fit_psychometric(points);
    }
    let i = mean
        .windows(2)
        .position(|w| w[0].1 < 0.5 && w[1].1 >= 0.5)
        .ok_or_else(|| Error::SrtOutOfRange("scores never rise through 0.5".into()))?;
    let start = (i + 1).saturating_sub(window / 2).min(mean.len() - window);
    let (lo, hi) = (mean[start].0, mean[start + window - 1].0);
    let kept: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.0 >= lo && p.0 <= hi).collect();
    fit_psychometric(&kept)
}
