//! Blind SNR estimation: noise PSD tracking, Wiener separation, power ratio.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::dsp::Stft;
use crate::numeric::expint_e1;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTracker {
    /// Improved minima-controlled recursive averaging.
    Imcra,
    /// Plain minimum statistics of the smoothed periodogram.
    MinStats,
}

/// How the speech and noise powers of the ratio are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerEstimate {
    /// Energies of the resynthesized `G·Y` and `(1−G)·Y` waveforms.
    Waveform,
    /// Posterior expected energies: the waveform terms plus the Wiener
    /// posterior variance `G·λ` on both sides.
    Posterior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnrConfig {
    pub tracker: NoiseTracker,
    pub power: PowerEstimate,
    /// STFT frame length in samples (50% overlap).
    pub frame_len: usize,
    /// Minimum search: `subwindows` sub-windows of `subwindow_frames` frames.
    pub subwindows: usize,
    pub subwindow_frames: usize,
    /// Decision-directed smoothing of the Wiener a-priori SNR.
    pub dd_alpha: f64,
    pub xi_min_db: f64,
    /// Noise PSD floor relative to the mean periodogram power.
    pub relative_floor_db: f64,
}

impl Default for SnrConfig {
    fn default() -> Self {
        Self {
            tracker: NoiseTracker::Imcra,
            power: PowerEstimate::Posterior,
            frame_len: 512,
            subwindows: 8,
            subwindow_frames: 15,
            dd_alpha: 0.9,
            xi_min_db: -25.0,
            relative_floor_db: -60.0,
        }
    }
}

impl SnrConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Error::Config {
            field: format!("snr.{field}"),
            message: message.to_string(),
        };
        if self.frame_len < 16 || self.frame_len % 2 != 0 {
            return Err(bad("frame_len", "must be even and at least 16"));
        }
        if self.subwindows == 0 || self.subwindow_frames == 0 {
            return Err(bad("subwindows", "minimum search window must be non-empty"));
        }
        if !(0.0..1.0).contains(&self.dd_alpha) {
            return Err(bad("dd_alpha", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

// Tracking constants (per-frame smoothing and detection thresholds).
const ALPHA_S: f64 = 0.9;
const ALPHA_D: f64 = 0.85;
const BETA: f64 = 1.47;
const B_MIN: f64 = 1.66;
const GAMMA0: f64 = 4.6;
const GAMMA1: f64 = 3.0;
const ZETA0: f64 = 1.67;
const ALPHA_XI: f64 = 0.92;
const INIT_FRAMES: usize = 6;
const FREQ_SMOOTH: [f64; 3] = [0.25, 0.5, 0.25];

fn smooth_freq(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (j, w) in FREQ_SMOOTH.iter().enumerate() {
                let idx = k as isize + j as isize - 1;
                if idx >= 0 && (idx as usize) < n {
                    acc += w * x[idx as usize];
                    wsum += w;
                }
            }
            acc / wsum
        })
        .collect()
}

/// Running minimum over `u` sub-windows of `v` frames.
struct MinTracker {
    u: usize,
    v: usize,
    count: usize,
    min: Vec<f64>,
    sub: Vec<f64>,
    stored: Vec<Vec<f64>>,
}

impl MinTracker {
    fn new(init: &[f64], u: usize, v: usize) -> Self {
        Self {
            u,
            v,
            count: 0,
            min: init.to_vec(),
            sub: init.to_vec(),
            stored: Vec::new(),
        }
    }

    fn update(&mut self, s: &[f64]) {
        for k in 0..s.len() {
            self.min[k] = self.min[k].min(s[k]);
            self.sub[k] = self.sub[k].min(s[k]);
        }
        self.count += 1;
        if self.count == self.v {
            self.count = 0;
            self.stored.push(self.sub.clone());
            if self.stored.len() > self.u {
                self.stored.remove(0);
            }
            for k in 0..s.len() {
                self.min[k] = self.stored.iter().map(|w| w[k]).fold(self.sub[k], f64::min);
            }
            self.sub.copy_from_slice(s);
        }
    }
}

/// Per-frame noise PSD estimates for a sequence of periodograms.
fn track_noise(power: &[Vec<f64>], config: &SnrConfig, floor: f64) -> Vec<Vec<f64>> {
    match config.tracker {
        NoiseTracker::Imcra => imcra(power, config, floor),
        NoiseTracker::MinStats => min_stats(power, config, floor),
    }
}

fn imcra(power: &[Vec<f64>], config: &SnrConfig, floor: f64) -> Vec<Vec<f64>> {
    let bins = power[0].len();
    let xi_min = 10f64.powf(config.xi_min_db / 10.0);
    let (u, v) = (config.subwindows, config.subwindow_frames);

    let y0 = initial_psd(power);
    let y0 = &y0;
    let mut s = smooth_freq(y0);
    let mut s_tilde = s.clone();
    let mut mins = MinTracker::new(&s, u, v);
    let mut mins_tilde = MinTracker::new(&s, u, v);
    let mut lambda: Vec<f64> = y0.iter().map(|&y| y.max(floor)).collect();
    let mut lambda_tilde = lambda.clone();
    let mut gain_h1 = vec![1.0; bins];
    let mut gamma_prev = vec![1.0; bins];
    let mut out = Vec::with_capacity(power.len());
    out.push(lambda.clone());

    let mut indicator = vec![0.0; bins];
    let mut masked = vec![0.0; bins];
    for y in &power[1..] {
        let mut xi = vec![0.0; bins];
        let mut nu = vec![0.0; bins];
        for k in 0..bins {
            let gamma = y[k] / lambda[k];
            let dd = ALPHA_XI * gain_h1[k] * gain_h1[k] * gamma_prev[k] + (1.0 - ALPHA_XI) * (gamma - 1.0).max(0.0);
            xi[k] = dd.max(xi_min);
            nu[k] = gamma * xi[k] / (1.0 + xi[k]);
            gain_h1[k] = xi[k] / (1.0 + xi[k]) * (0.5 * expint_e1(nu[k].max(1e-10))).exp();
            gamma_prev[k] = gamma;
        }

        // first pass: rough speech-absence detection
        let sf = smooth_freq(y);
        for k in 0..bins {
            s[k] = ALPHA_S * s[k] + (1.0 - ALPHA_S) * sf[k];
        }
        mins.update(&s);
        for k in 0..bins {
            let m = B_MIN * mins.min[k].max(floor);
            let gamma_min = y[k] / m;
            let zeta = s[k] / m;
            indicator[k] = if gamma_min < GAMMA0 && zeta < ZETA0 { 1.0 } else { 0.0 };
            masked[k] = indicator[k] * y[k];
        }

        // second pass: smoothing restricted to speech-absent bins
        let num = smooth_freq(&masked);
        let den = smooth_freq(&indicator);
        for k in 0..bins {
            let sft = if den[k] > 0.0 { num[k] / den[k] } else { s_tilde[k] };
            s_tilde[k] = ALPHA_S * s_tilde[k] + (1.0 - ALPHA_S) * sft;
        }
        mins_tilde.update(&s_tilde);

        for k in 0..bins {
            let m = B_MIN * mins_tilde.min[k].max(floor);
            let gamma_min = y[k] / m;
            let zeta = s[k] / m;
            let q = if zeta >= ZETA0 {
                0.0
            } else if gamma_min <= 1.0 {
                1.0
            } else if gamma_min < GAMMA1 {
                (GAMMA1 - gamma_min) / (GAMMA1 - 1.0)
            } else {
                0.0
            };
            let p = if q >= 1.0 {
                0.0
            } else {
                1.0 / (1.0 + q / (1.0 - q) * (1.0 + xi[k]) * (-nu[k]).exp())
            };
            let a = ALPHA_D + (1.0 - ALPHA_D) * p;
            lambda_tilde[k] = a * lambda_tilde[k] + (1.0 - a) * y[k];
            lambda[k] = (BETA * lambda_tilde[k]).max(floor);
        }
        out.push(lambda.clone());
    }
    out
}

/// Mean periodogram of the leading frames, used to seed the trackers.
fn initial_psd(power: &[Vec<f64>]) -> Vec<f64> {
    let n = power.len().min(INIT_FRAMES);
    let mut acc = vec![0.0; power[0].len()];
    for y in &power[..n] {
        for (a, v) in acc.iter_mut().zip(y) {
            *a += v / n as f64;
        }
    }
    acc
}

fn min_stats(power: &[Vec<f64>], config: &SnrConfig, floor: f64) -> Vec<Vec<f64>> {
    let mut p = initial_psd(power);
    let mut mins = MinTracker::new(&p, config.subwindows, config.subwindow_frames);
    let mut out = Vec::with_capacity(power.len());
    out.push(p.iter().map(|x| x.max(floor)).collect());
    for y in &power[1..] {
        for k in 0..p.len() {
            p[k] = ALPHA_D * p[k] + (1.0 - ALPHA_D) * y[k];
        }
        mins.update(&p);
        out.push(mins.min.iter().map(|m| (B_MIN * m).max(floor)).collect());
    }
    out
}

/// Wiener-filtered speech and residual noise estimates of one signal.
#[derive(Debug, Clone)]
pub struct Separation {
    pub speech: Vec<f64>,
    pub noise: Vec<f64>,
    /// Per STFT frame: speech and noise energy under the configured estimate.
    frame_speech: Vec<f64>,
    frame_noise: Vec<f64>,
    hop: usize,
    power: PowerEstimate,
}

impl Separation {
    /// `10 log10(Σ ŝ² / Σ n̂²)` over the sample range.
    pub fn snr_db(&self, range: Range<usize>) -> Result<f64> {
        let end = range.end.min(self.speech.len());
        if range.start >= end {
            return Err(Error::invalid("empty SNR estimation range"));
        }
        let (ps, pn) = match self.power {
            PowerEstimate::Waveform => (
                self.speech[range.start..end].iter().map(|x| x * x).sum(),
                self.noise[range.start..end].iter().map(|x| x * x).sum(),
            ),
            PowerEstimate::Posterior => {
                // frame m is centred on sample m·hop
                let first = range.start.div_ceil(self.hop);
                let last = (end - 1) / self.hop;
                let frames = first..(last + 1).min(self.frame_speech.len());
                if frames.is_empty() {
                    return Err(Error::invalid("SNR estimation range shorter than one frame hop"));
                }
                (
                    self.frame_speech[frames.clone()].iter().sum::<f64>(),
                    self.frame_noise[frames].iter().sum::<f64>(),
                )
            }
        };
        if ps <= 0.0 && pn <= 0.0 {
            return Err(Error::ZeroPower { what: "signal segment" });
        }
        Ok(10.0 * (ps.max(f64::MIN_POSITIVE) / pn.max(f64::MIN_POSITIVE)).log10())
    }
}

/// Splits a noisy signal into speech and noise estimates.
pub fn separate(wave: &Waveform, config: &SnrConfig) -> Result<Separation> {
    config.validate()?;
    let x = &wave.samples;
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroPower { what: "input signal" });
    }
    let stft = Stft::new(config.frame_len);
    let spectra = stft.analyze(x);
    let power: Vec<Vec<f64>> = spectra.iter().map(|f| f.iter().map(|c| c.norm_sqr()).collect()).collect();
    let total: f64 = power.iter().flatten().sum();
    let mean = total / (power.len() * stft.bins()) as f64;
    let floor = (mean * 10f64.powf(config.relative_floor_db / 10.0)).max(1e-30);
    let noise_psd = track_noise(&power, config, floor);

    let alpha = config.dd_alpha;
    let xi_min = 10f64.powf(config.xi_min_db / 10.0);
    let bins = stft.bins();
    let mut prev_speech = vec![0.0; bins];
    let mut speech_spec = Vec::with_capacity(spectra.len());
    let mut noise_spec = Vec::with_capacity(spectra.len());
    let mut frame_speech = Vec::with_capacity(spectra.len());
    let mut frame_noise = Vec::with_capacity(spectra.len());
    for (m, frame) in spectra.iter().enumerate() {
        let mut s = Vec::with_capacity(bins);
        let mut n = Vec::with_capacity(bins);
        let (mut es, mut en) = (0.0, 0.0);
        for (k, &y) in frame.iter().enumerate() {
            let lambda = noise_psd[m][k];
            let py = power[m][k];
            let gamma = py / lambda;
            let xi = if m == 0 {
                (gamma - 1.0).max(xi_min)
            } else {
                (alpha * prev_speech[k] / lambda + (1.0 - alpha) * (gamma - 1.0).max(0.0)).max(xi_min)
            };
            let g = xi / (1.0 + xi);
            prev_speech[k] = g * g * py;
            s.push(y * g);
            n.push(y * (1.0 - g));
            let var = match config.power {
                PowerEstimate::Waveform => 0.0,
                PowerEstimate::Posterior => g * lambda,
            };
            let w = if k == 0 || k == bins - 1 { 1.0 } else { 2.0 };
            es += w * (g * g * py + var);
            en += w * ((1.0 - g) * (1.0 - g) * py + var);
        }
        speech_spec.push(s);
        noise_spec.push(n);
        frame_speech.push(es);
        frame_noise.push(en);
    }
    Ok(Separation {
        speech: stft.synthesize(&speech_spec, x.len()),
        noise: stft.synthesize(&noise_spec, x.len()),
        frame_speech,
        frame_noise,
        hop: stft.hop,
        power: config.power,
    })
}
/// Blind SNR of the whole signal, in dB.
pub fn estimate_snr(wave: &Waveform, config: &SnrConfig) -> Result<f64> {
    separate(wave, config)?.snr_db(0..wave.len())
}
