//! Short-time objective intelligibility.

use crate::audio::Waveform;
use crate::dsp::{hann_open, resample, rfft};
use crate::{Error, Result};

pub const STOI_RATE: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
/// Frames per analysis segment (384 ms).
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Minimum input length at 10 kHz for one analysis segment, before
/// silent-frame removal.
pub const MIN_SAMPLES: usize = (SEGMENT - 1) * HOP + FRAME + 1;

/// STOI of `degraded` against `clean` (same length and sample rate).
pub fn stoi(clean: &Waveform, degraded: &Waveform) -> Result<f64> {
    if clean.sample_rate != degraded.sample_rate {
        return Err(Error::invalid("STOI inputs differ in sample rate"));
    }
    let x = resample(&clean.samples, clean.sample_rate, STOI_RATE);
    let y = resample(&degraded.samples, degraded.sample_rate, STOI_RATE);
    stoi_10k(&x, &y)
}

/// STOI of signals already at 10 kHz.
pub fn stoi_10k(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < MIN_SAMPLES {
        return Err(Error::TooShort {
            needed: MIN_SAMPLES,
            got: x.len(),
        });
    }
    let (x, y) = remove_silent_frames(x, y);
    let xb = third_octave_envelopes(&x);
    let yb = third_octave_envelopes(&y);
    let frames = xb.first().map_or(0, Vec::len);
    if frames < SEGMENT {
        return Err(Error::TooShort {
            needed: SEGMENT,
            got: frames,
        });
    }
    let clip = 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let segments = frames - SEGMENT + 1;
    for m in SEGMENT..=frames {
        for (xr, yr) in xb.iter().zip(&yb) {
            let xs = &xr[m - SEGMENT..m];
            let ys = &yr[m - SEGMENT..m];
            let scale = norm(xs) / (norm(ys) + EPS);
            let yp: Vec<f64> = xs.iter().zip(ys).map(|(a, b)| (b * scale).min(a * (1.0 + clip))).collect();
            total += correlation(xs, &yp);
        }
    }
    Ok(total / (segments * BANDS) as f64)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let da: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let db: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let na = norm(&da) + EPS;
    let nb = norm(&db) + EPS;
    da.iter().zip(&db).map(|(p, q)| (p / na) * (q / nb)).sum()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(FRAME)).step_by(HOP)
}

/// Drops frames more than 40 dB below the loudest clean frame and
/// overlap-adds the remainder.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann_open(FRAME);
    let frame = |s: &[f64], i: usize| -> Vec<f64> { w.iter().zip(&s[i..i + FRAME]).map(|(a, b)| a * b).collect() };
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let energy: Vec<f64> = starts.iter().map(|&i| 20.0 * (norm(&frame(x, i)) + EPS).log10()).collect();
    let max = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energy)
        .filter(|(_, &e)| max - DYN_RANGE_DB - e < 0.0)
        .map(|(&i, _)| i)
        .collect();
    let len = if kept.is_empty() { 0 } else { (kept.len() - 1) * HOP + FRAME };
    let mut xo = vec![0.0; len];
    let mut yo = vec![0.0; len];
    for (j, &i) in kept.iter().enumerate() {
        for (k, (a, b)) in frame(x, i).into_iter().zip(frame(y, i)).enumerate() {
            xo[j * HOP + k] += a;
            yo[j * HOP + k] += b;
        }
    }
    (xo, yo)
}

/// Band-edge bins of the one-third-octave filterbank.
fn band_edges() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let freq = |b: usize| b as f64 * STOI_RATE as f64 / NFFT as f64;
    let nearest = |hz: f64| {
        (0..bins)
            .min_by(|&a, &b| (freq(a) - hz).powi(2).total_cmp(&(freq(b) - hz).powi(2)))
            .unwrap()
    };
    (0..BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band envelopes, `BANDS × frames`.
fn third_octave_envelopes(x: &[f64]) -> Vec<Vec<f64>> {
    let w = hann_open(FRAME);
    let edges = band_edges();
    let mut out = vec![Vec::new(); BANDS];
    let mut buf = vec![0.0; FRAME];
    for i in frame_starts(x.len()) {
        for (k, b) in buf.iter_mut().enumerate() {
            *b = w[k] * x[i + k];
        }
        let spec = rfft(&buf, NFFT);
        for (band, &(lo, hi)) in out.iter_mut().zip(&edges) {
            band.push(spec[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt());
        }
    }
    out
}
