//! Small signal-processing toolbox shared by the front end, the SNR
//! estimator, STOI, and the noise generator.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let (planner, cache) = &mut *p;
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// In-place forward FFT (unnormalized).
pub fn fft(buf: &mut [Complex64]) {
    plan(buf.len(), false).process(buf);
}

/// In-place inverse FFT, normalized by 1/N.
pub fn ifft(buf: &mut [Complex64]) {
    let n = buf.len();
    plan(n, true).process(buf);
    let scale = 1.0 / n as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// One-sided spectrum (n_fft/2 + 1 bins) of a real frame, zero-padded to `n_fft`.
pub fn rfft(frame: &[f64], n_fft: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for (b, &x) in buf.iter_mut().zip(frame) {
        b.re = x;
    }
    fft(&mut buf);
    buf.truncate(n_fft / 2 + 1);
    buf
}

/// Inverse of [`rfft`]: rebuilds the Hermitian-symmetric spectrum and returns
/// the real part of length `n_fft`.
pub fn irfft(half: &[Complex64], n_fft: usize) -> Vec<f64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    buf[..half.len()].copy_from_slice(half);
    for k in 1..n_fft.div_ceil(2) {
        buf[n_fft - k] = half[k].conj();
    }
    ifft(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect()
}

/// Periodic Hann window (sums to a constant at 50% overlap).
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Hann window without the zero end points, as used by STOI.
pub fn hann_open(n: usize) -> Vec<f64> {
    (1..=n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n + 1) as f64).cos()).collect()
}

pub fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

pub fn rms(x: &[f64]) -> f64 {
    mean_square(x).sqrt()
}

/// Short-time analysis/synthesis pair with a square-root periodic Hann
/// window at 50% overlap, which reconstructs the input exactly.
#[derive(Debug, Clone)]
pub struct Stft {
    pub frame_len: usize,
    pub hop: usize,
    window: Vec<f64>,
}

impl Stft {
    pub fn new(frame_len: usize) -> Self {
        assert!(frame_len >= 2 && frame_len % 2 == 0, "frame length must be even");
        let window = hann_periodic(frame_len).into_iter().map(f64::sqrt).collect();
        Self {
            frame_len,
            hop: frame_len / 2,
            window,
        }
    }

    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Frames of the signal padded by one hop at both ends (and to a whole
    /// number of hops), so every input sample is covered by two frames.
    pub fn analyze(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let padded = self.pad(x);
        let n_frames = (padded.len() - self.frame_len) / self.hop + 1;
        let mut frame = vec![0.0; self.frame_len];
        (0..n_frames)
            .map(|m| {
                let start = m * self.hop;
                for (i, f) in frame.iter_mut().enumerate() {
                    *f = padded[start + i] * self.window[i];
                }
                rfft(&frame, self.frame_len)
            })
            .collect()
    }

    /// Overlap-add resynthesis; returns exactly `len` samples.
    pub fn synthesize(&self, spectra: &[Vec<Complex64>], len: usize) -> Vec<f64> {
        let total = (spectra.len() - 1) * self.hop + self.frame_len;
        let mut out = vec![0.0; total];
        for (m, spec) in spectra.iter().enumerate() {
            let frame = irfft(spec, self.frame_len);
            let start = m * self.hop;
            for (i, v) in frame.iter().enumerate() {
                out[start + i] += v * self.window[i];
            }
        }
        out.drain(..self.hop);
        out.truncate(len);
        out
    }

    fn pad(&self, x: &[f64]) -> Vec<f64> {
        let body = x.len().div_ceil(self.hop) * self.hop;
        let mut padded = vec![0.0; self.hop + body + self.hop];
        padded[self.hop..self.hop + x.len()].copy_from_slice(x);
        padded
    }
}

/// Welch power spectral density (one-sided, Hann window, 50% overlap).
/// Returns `n_fft/2 + 1` bins; scaling is relative, suitable for shape comparisons.
pub fn welch_psd(x: &[f64], n_fft: usize) -> Vec<f64> {
    let win = hann_periodic(n_fft);
    let norm: f64 = win.iter().map(|w| w * w).sum();
    let hop = n_fft / 2;
    let mut acc = vec![0.0; n_fft / 2 + 1];
    let mut count = 0usize;
    let mut frame = vec![0.0; n_fft];
    let mut start = 0;
    while start + n_fft <= x.len() {
        for i in 0..n_fft {
            frame[i] = x[start + i] * win[i];
        }
        for (a, c) in acc.iter_mut().zip(rfft(&frame, n_fft)) {
            *a += c.norm_sqr() / norm;
        }
        count += 1;
        start += hop;
    }
    if count > 0 {
        for a in &mut acc {
            *a /= count as f64;
        }
    }
    acc
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Rational resampling by polyphase filtering with a Kaiser-windowed sinc
/// low-pass (beta 5, 10 zero crossings per side of the slower rate).
pub fn resample(x: &[f64], from_hz: u32, to_hz: u32) -> Vec<f64> {
    if from_hz == to_hz {
        return x.to_vec();
    }
    let g = gcd(from_hz as usize, to_hz as usize);
    let up = to_hz as usize / g;
    let down = from_hz as usize / g;
    let max_rate = up.max(down);
    let half = 10 * max_rate;
    let taps = 2 * half + 1;
    let cutoff = 1.0 / max_rate as f64;
    let beta = 5.0;
    let i0b = bessel_i0(beta);
    let h: Vec<f64> = (0..taps)
        .map(|i| {
            let t = i as f64 - half as f64;
            let sinc = if t == 0.0 {
                1.0
            } else {
                (PI * cutoff * t).sin() / (PI * cutoff * t)
            };
            let r = t / half as f64;
            let kaiser = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b;
            cutoff * sinc * kaiser * up as f64
        })
        .collect();

    let out_len = (x.len() * up).div_ceil(down);
    (0..out_len)
        .map(|m| {
            // output sample m sits at index m*down on the upsampled grid
            let center = m * down;
            let mut acc = 0.0;
            // upsampled index j = n*up contributes h[center - j + half]
            let lo = (center + half + 1).saturating_sub(taps);
            let first_n = lo.div_ceil(up);
            let last_n = ((center + half) / up).min(x.len().saturating_sub(1));
            if x.is_empty() {
                return 0.0;
            }
            for n in first_n..=last_n {
                let j = n * up;
                let k = center + half - j;
                if k < taps {
                    acc += x[n] * h[k];
                }
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stft_reconstructs_exactly() {
        let x: Vec<f64> = (0..3001).map(|i| ((i as f64) * 0.013).sin() + 0.1 * (i % 7) as f64).collect();
        let stft = Stft::new(512);
        let spec = stft.analyze(&x);
        let y = stft.synthesize(&spec, x.len());
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rfft_roundtrip() {
        let x: Vec<f64> = (0..64).map(|i| (i as f64).cos()).collect();
        let y = irfft(&rfft(&x, 64), 64);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_preserves_low_tone() {
        let fs_in = 25_000;
        let fs_out = 10_000;
        let f = 440.0;
        let x: Vec<f64> = (0..25_000).map(|n| (2.0 * PI * f * n as f64 / fs_in as f64).sin()).collect();
        let y = resample(&x, fs_in, fs_out);
        assert_eq!(y.len(), 10_000);
        for (m, v) in y.iter().enumerate().skip(200).take(9_000) {
            let expect = (2.0 * PI * f * m as f64 / fs_out as f64).sin();
            assert!((v - expect).abs() < 2e-3, "m={m} {v} vs {expect}");
        }
    }

    #[test]
    fn resample_rejects_above_new_nyquist() {
        let x: Vec<f64> = (0..25_000).map(|n| (2.0 * PI * 8_000.0 * n as f64 / 25_000.0).sin()).collect();
        let y = resample(&x, 25_000, 10_000);
        assert!(rms(&y[500..9_500]) < 0.01);
    }
}
