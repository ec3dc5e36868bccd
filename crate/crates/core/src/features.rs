//! MFCC front end: log-Mel spectrogram, optional audiogram flooring,
//! cepstra, and regression deltas.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::audio::{ms_to_samples, Waveform, DEFAULT_SAMPLE_RATE};
use crate::dsp;
use crate::error::{Error, Result};

pub const AUDIOGRAM_FREQS_HZ: [f64; 6] = [250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0];
const ABSOLUTE_FLOOR: f64 = 1e-12;
const DUMP_MAGIC: &[u8; 4] = b"NORF";
const DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub frame_ms: f64,
    pub shift_ms: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub n_ceps: usize,
    pub delta_window: usize,
    /// Floor of band energies relative to the utterance maximum, in dB.
    pub floor_db: f64,
    pub fmin_hz: f64,
    pub fmax_hz: Option<f64>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            frame_ms: 25.0,
            shift_ms: 10.0,
            n_fft: 1024,
            n_mels: 26,
            n_ceps: 13,
            delta_window: 2,
            floor_db: -80.0,
            fmin_hz: 0.0,
            fmax_hz: None,
        }
    }
}

impl FeatureConfig {
    pub fn frame_len(&self) -> usize {
        ms_to_samples(self.frame_ms, self.sample_rate)
    }

    pub fn frame_shift(&self) -> usize {
        ms_to_samples(self.shift_ms, self.sample_rate)
    }

    pub fn dim(&self) -> usize {
        3 * self.n_ceps
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m));
        if self.frame_shift() == 0 || self.frame_len() <= self.frame_shift() {
            return bad("frame length must exceed a non-zero frame shift");
        }
        if self.n_fft < self.frame_len() {
            return bad("FFT size must cover the frame length");
        }
        if self.n_ceps == 0 || self.n_ceps > self.n_mels {
            return bad("cepstral count must lie in 1..=mel filter count");
        }
        if self.delta_window == 0 {
            return bad("delta window must be at least 1");
        }
        Ok(())
    }

    /// Number of frames for a signal of `len` samples (0 if shorter than a frame).
    pub fn num_frames(&self, len: usize) -> usize {
        let fl = self.frame_len();
        if len < fl {
            0
        } else {
            (len - fl) / self.frame_shift() + 1
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular Mel filterbank over the one-sided FFT bins.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Per band: (first bin, weights).
    bands: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(config: &FeatureConfig) -> Self {
        let sr = f64::from(config.sample_rate);
        let fmax = config.fmax_hz.unwrap_or(sr / 2.0);
        let (lo, hi) = (hz_to_mel(config.fmin_hz), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64))
            .collect();
        let n_bins = config.n_fft / 2 + 1;
        let bin_hz = sr / config.n_fft as f64;
        let bands = (0..config.n_mels)
            .map(|b| {
                let (l, c, r) = (edges[b], edges[b + 1], edges[b + 2]);
                let weights: Vec<(usize, f64)> = (0..n_bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > l && f <= c {
                            (f - l) / (c - l)
                        } else if f > c && f < r {
                            (r - f) / (r - c)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                match weights.first() {
                    Some(&(first, _)) => (first, weights.iter().map(|&(_, w)| w).collect()),
                    None => (0, Vec::new()),
                }
            })
            .collect();
        Self {
            bands,
            centers_hz: edges[1..=config.n_mels].to_vec(),
        }
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (first, w)) in out.iter_mut().zip(&self.bands) {
            *o = w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Natural-log Mel band energies, one row per frame.
///
/// The power spectrum is scaled by the window energy so that the bins of a
/// frame sum to the (window-weighted) mean square of the frame. Energies are
/// floored at `floor_db` below the utterance maximum (and never below 1e-12).
pub fn log_mel_spectrogram(wave: &Waveform, config: &FeatureConfig) -> Result<Array2<f64>> {
    config.validate()?;
    if wave.sample_rate != config.sample_rate {
        return Err(Error::invalid(format!(
            "waveform at {} Hz, front end configured for {} Hz",
            wave.sample_rate, config.sample_rate
        )));
    }
    let fl = config.frame_len();
    let t = config.num_frames(wave.len());
    if t == 0 {
        return Err(Error::TooShort {
            needed: fl,
            got: wave.len(),
        });
    }
    let shift = config.frame_shift();
    let win = dsp::hamming(fl);
    let win_energy: f64 = win.iter().map(|w| w * w).sum();
    let fb = MelFilterbank::new(config);
    let n_bins = config.n_fft / 2 + 1;
    let mut out = Array2::zeros((t, config.n_mels));
    let mut frame = vec![0.0; fl];
    let mut power = vec![0.0; n_bins];
    let mut energies = vec![0.0; config.n_mels];
    for i in 0..t {
        let x = &wave.samples[i * shift..i * shift + fl];
        for ((f, &s), &w) in frame.iter_mut().zip(x).zip(&win) {
            *f = s * w;
        }
        let spec = dsp::rfft(&frame, config.n_fft);
        for (k, (p, c)) in power.iter_mut().zip(&spec).enumerate() {
            let two = if k == 0 || k == n_bins - 1 { 1.0 } else { 2.0 };
            *p = two * c.norm_sqr() / (config.n_fft as f64 * win_energy);
        }
        fb.apply(&power, &mut energies);
        out.row_mut(i).iter_mut().zip(&energies).for_each(|(o, &e)| *o = e);
    }
    let peak = out.iter().cloned().fold(0.0, f64::max);
    let floor = (peak * 10f64.powf(config.floor_db / 10.0)).max(ABSOLUTE_FLOOR);
    out.mapv_inplace(|e| e.max(floor).ln());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audiogram {
    /// dB HL at 0.25, 0.5, 1, 2, 4, 8 kHz.
    pub thresholds: [f64; 6],
}

impl Audiogram {
    pub fn new(thresholds: [f64; 6]) -> Result<Self> {
        let a = Self { thresholds };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.iter().all(|t| (-10.0..=120.0).contains(t)) {
            Ok(())
        } else {
            Err(Error::invalid("audiogram thresholds must lie in [-10, 120] dB HL"))
        }
    }

    /// Threshold at `hz`, linear in log-frequency, held constant outside the measured range.
    pub fn threshold_at(&self, hz: f64) -> f64 {
        let x = hz.max(1e-3).log2();
        let xs = AUDIOGRAM_FREQS_HZ.map(f64::log2);
        if x <= xs[0] {
            return self.thresholds[0];
        }
        if x >= xs[5] {
            return self.thresholds[5];
        }
        let i = xs.iter().rposition(|&v| v <= x).unwrap_or(0).min(4);
        let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
        self.thresholds[i] + t * (self.thresholds[i + 1] - self.thresholds[i])
    }

    /// Mean of the 2 kHz and 4 kHz thresholds.
    pub fn high_frequency_mean(&self) -> f64 {
        0.5 * (self.thresholds[3] + self.thresholds[4])
    }
}

/// Ties the digital scale to sound pressure: a signal with RMS `ref_rms`
/// is presented at `presentation_spl_db`. dB HL values are taken as dB SPL
/// plus `hl_offset_db`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Calibration {
    pub ref_rms: f64,
    pub presentation_spl_db: f64,
    pub hl_offset_db: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            ref_rms: 0.05,
            presentation_spl_db: 65.0,
            hl_offset_db: 0.0,
        }
    }
}

impl Calibration {
    /// Per-band floors on the natural-log energy scale of [`log_mel_spectrogram`].
    pub fn band_floors(&self, audiogram: &Audiogram, centers_hz: &[f64]) -> Vec<f64> {
        let ref_ln = (self.ref_rms * self.ref_rms).ln();
        centers_hz
            .iter()
            .map(|&hz| {
                let db = audiogram.threshold_at(hz) + self.hl_offset_db - self.presentation_spl_db;
                ref_ln + db * std::f64::consts::LN_10 / 10.0
            })
            .collect()
    }
}

/// Elementwise `max(logmel, floor_b)`.
pub fn apply_audiogram_threshold(logmel: &Array2<f64>, floors: &[f64]) -> Result<Array2<f64>> {
    if floors.len() != logmel.ncols() {
        return Err(Error::Dimension {
            expected: logmel.ncols(),
            got: floors.len(),
        });
    }
    let mut out = logmel.clone();
    for mut row in out.rows_mut() {
        for (v, &f) in row.iter_mut().zip(floors) {
            *v = v.max(f);
        }
    }
    Ok(out)
}

/// Observation sequence: `T × 3·n_ceps` (statics, Δ, ΔΔ).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Array2<f64>,
    pub frame_shift_s: f64,
    pub utterance_id: String,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row(t).to_slice().expect("feature rows are contiguous")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(20 + 4 * self.frames.len());
        buf.extend_from_slice(DUMP_MAGIC);
        buf.write_u32::<LittleEndian>(DUMP_VERSION).unwrap();
        buf.write_u32::<LittleEndian>(self.len() as u32).unwrap();
        buf.write_u32::<LittleEndian>(self.dim() as u32).unwrap();
        buf.write_f32::<LittleEndian>((self.frame_shift_s * 1000.0) as f32).unwrap();
        for v in self.frames.iter() {
            buf.write_f32::<LittleEndian>(*v as f32).unwrap();
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>, utterance_id: &str) -> Result<Self> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut f = fs::File::open(path).map_err(io)?;
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic).map_err(io)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::invalid(format!("{} is not a feature dump", path.display())));
        }
        let version = f.read_u32::<LittleEndian>().map_err(io)?;
        if version != DUMP_VERSION {
            return Err(Error::SchemaVersion {
                found: version,
                expected: DUMP_VERSION,
            });
        }
        let t = f.read_u32::<LittleEndian>().map_err(io)? as usize;
        let dim = f.read_u32::<LittleEndian>().map_err(io)? as usize;
        let shift_ms = f.read_f32::<LittleEndian>().map_err(io)?;
        let mut data = vec![0f32; t * dim];
        f.read_f32_into::<LittleEndian>(&mut data).map_err(io)?;
        let frames =
            Array2::from_shape_vec((t, dim), data.into_iter().map(f64::from).collect()).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self {
            frames,
            frame_shift_s: f64::from(shift_ms) / 1000.0,
            utterance_id: utterance_id.to_string(),
        })
    }
}

/// Orthonormal DCT-II of each row, keeping the first `n_ceps` coefficients.
fn dct(logmel: &Array2<f64>, n_ceps: usize) -> Array2<f64> {
    let b = logmel.ncols();
    let basis: Vec<Vec<f64>> = (0..n_ceps)
        .map(|n| {
            let scale = if n == 0 { (1.0 / b as f64).sqrt() } else { (2.0 / b as f64).sqrt() };
            (0..b)
                .map(|j| scale * (std::f64::consts::PI * n as f64 * (j as f64 + 0.5) / b as f64).cos())
                .collect()
        })
        .collect();
    let mut out = Array2::zeros((logmel.nrows(), n_ceps));
    for (t, row) in logmel.rows().into_iter().enumerate() {
        for (n, bv) in basis.iter().enumerate() {
            out[[t, n]] = row.iter().zip(bv).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// Regression deltas over `±window` frames with replicated edges.
pub fn deltas(x: &Array2<f64>, window: usize) -> Array2<f64> {
    let t = x.nrows() as isize;
    let denom = 2.0 * (1..=window).map(|k| (k * k) as f64).sum::<f64>();
    let at = |i: isize| i.clamp(0, t - 1) as usize;
    let mut out = Array2::zeros(x.raw_dim());
    for i in 0..t {
        for k in 1..=window as isize {
            let plus = x.row(at(i + k));
            let minus = x.row(at(i - k));
            let mut row = out.row_mut(i as usize);
            for ((o, p), m) in row.iter_mut().zip(plus.iter()).zip(minus.iter()) {
                *o += k as f64 * (p - m) / denom;
            }
        }
    }
    out
}

/// MFCC + Δ + ΔΔ. `floors` (from [`Calibration::band_floors`]) enables
/// audiogram thresholding of the log-Mel stage.
pub fn extract_features(wave: &Waveform, config: &FeatureConfig, floors: Option<&[f64]>, utterance_id: &str) -> Result<FeatureSequence> {
    let mut logmel = log_mel_spectrogram(wave, config)?;
    if let Some(f) = floors {
        logmel = apply_audiogram_threshold(&logmel, f)?;
    }
    let statics = dct(&logmel, config.n_ceps);
    let d1 = deltas(&statics, config.delta_window);
    let d2 = deltas(&d1, config.delta_window);
    let c = config.n_ceps;
    let mut frames = Array2::zeros((statics.nrows(), 3 * c));
    frames.slice_mut(s![.., 0..c]).assign(&statics);
    frames.slice_mut(s![.., c..2 * c]).assign(&d1);
    frames.slice_mut(s![.., 2 * c..]).assign(&d2);
    if frames.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature extraction".into()));
    }
    Ok(FeatureSequence {
        frames,
        frame_shift_s: config.shift_ms / 1000.0,
        utterance_id: utterance_id.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(hz: f64, n: usize, amp: f64) -> Waveform {
        let s = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * hz * i as f64 / 25_000.0).sin())
            .collect();
        Waveform::new(s, 25_000).unwrap()
    }

    fn noise(n: usize, seed: u64) -> Waveform {
        use rand::Rng;
        let mut r = crate::seed::rng(&[seed]);
        Waveform::new((0..n).map(|_| r.random_range(-0.1..0.1)).collect(), 25_000).unwrap()
    }

    #[test]
    fn frame_count() {
        let c = FeatureConfig::default();
        assert_eq!((c.frame_len(), c.frame_shift()), (625, 250));
        let lm = log_mel_spectrogram(&noise(25_000, 1), &c).unwrap();
        assert_eq!(lm.dim(), (98, 26));
        assert!(log_mel_spectrogram(&noise(600, 1), &c).is_err());
    }

    #[test]
    fn silence_hits_floor_and_has_zero_deltas() {
        let c = FeatureConfig::default();
        let w = Waveform::silence(5000, 25_000);
        let lm = log_mel_spectrogram(&w, &c).unwrap();
        assert!(lm.iter().all(|&v| v == ABSOLUTE_FLOOR.ln()));
        let f = extract_features(&w, &c, None, "s").unwrap();
        assert_eq!(f.dim(), 39);
        assert!(f.frames.slice(s![.., 13..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tone_peaks_in_containing_band() {
        let c = FeatureConfig::default();
        let fb = MelFilterbank::new(&c);
        let lm = log_mel_spectrogram(&tone(1000.0, 25_000, 0.1), &c).unwrap();
        let row = lm.row(40);
        let argmax = (0..26).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        // band whose triangle peak is closest to 1 kHz on the Mel scale
        let expect = (0..26)
            .min_by(|&a, &b| {
                let d = |i: usize| (hz_to_mel(fb.centers_hz()[i]) - hz_to_mel(1000.0)).abs();
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        assert_eq!(argmax, expect);
    }

    #[test]
    fn halving_amplitude_shifts_only_c0() {
        let c = FeatureConfig::default();
        let w = noise(10_000, 2);
        let half = Waveform::new(w.samples.iter().map(|v| v * 0.5).collect(), 25_000).unwrap();
        let a = extract_features(&w, &c, None, "a").unwrap();
        let b = extract_features(&half, &c, None, "b").unwrap();
        let shift = (26f64).sqrt() * 0.25f64.ln();
        for t in 0..a.len() {
            assert!((b.frames[[t, 0]] - a.frames[[t, 0]] - shift).abs() < 1e-9);
            for d in 1..39 {
                assert!((b.frames[[t, d]] - a.frames[[t, d]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shift_by_one_hop_offsets_frames() {
        let c = FeatureConfig::default();
        let w = noise(12_000, 3);
        let mut shifted = vec![0.0; 250];
        shifted.extend_from_slice(&w.samples);
        let a = extract_features(&w, &c, None, "a").unwrap();
        let b = extract_features(&Waveform::new(shifted, 25_000).unwrap(), &c, None, "b").unwrap();
        for t in 6..a.len() - 6 {
            for d in 0..39 {
                assert!((a.frames[[t, d]] - b.frames[[t + 1, d]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn audiogram_extremes() {
        let c = FeatureConfig::default();
        let fb = MelFilterbank::new(&c);
        let lm = log_mel_spectrogram(&noise(8000, 4), &c).unwrap();
        let cal = Calibration::default();
        let low = cal.band_floors(&Audiogram::new([-10.0; 6]).unwrap(), fb.centers_hz());
        assert_eq!(apply_audiogram_threshold(&lm, &low).unwrap(), lm);
        let high = cal.band_floors(&Audiogram::new([120.0; 6]).unwrap(), fb.centers_hz());
        let out = apply_audiogram_threshold(&lm, &high).unwrap();
        for row in out.rows() {
            for (v, f) in row.iter().zip(&high) {
                assert_eq!(v, f);
            }
        }
        assert!(apply_audiogram_threshold(&lm, &high[..5]).is_err());
        assert!(Audiogram::new([130.0; 6]).is_err());
    }

    #[test]
    fn audiogram_interpolation() {
        let a = Audiogram::new([15.0, 10.0, 15.0, 20.0, 50.0, 75.0]).unwrap();
        assert_eq!(a.threshold_at(100.0), 15.0);
        assert_eq!(a.threshold_at(2000.0), 20.0);
        assert!((a.threshold_at(2000.0 * 2f64.sqrt()) - 35.0).abs() < 1e-9);
        assert_eq!(a.threshold_at(12_000.0), 75.0);
        assert_eq!(a.high_frequency_mean(), 35.0);
    }

    #[test]
    fn dump_round_trip() {
        let c = FeatureConfig::default();
        let f = extract_features(&noise(5000, 5), &c, None, "u").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        f.write(&p).unwrap();
        let g = FeatureSequence::read(&p, "u").unwrap();
        assert_eq!(g.frames.dim(), f.frames.dim());
        for (x, y) in f.frames.iter().zip(g.frames.iter()) {
            assert!((x - y).abs() <= 1e-5 * x.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn threshold_idempotent_and_monotone(
            vals in prop::collection::vec(-40.0f64..5.0, 26 * 4),
            floors in prop::collection::vec(-30.0f64..0.0, 26),
        ) {
            let lm = Array2::from_shape_vec((4, 26), vals).unwrap();
            let once = apply_audiogram_threshold(&lm, &floors).unwrap();
            let twice = apply_audiogram_threshold(&once, &floors).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.iter().zip(lm.iter()).all(|(a, b)| a >= b));
        }

        #[test]
        fn finite_for_any_finite_input(samples in prop::collection::vec(-1.0f64..1.0, 700..1500), zero in any::<bool>()) {
            let s = if zero { vec![0.0; samples.len()] } else { samples };
            let f = extract_features(&Waveform::new(s, 25_000).unwrap(), &FeatureConfig::default(), None, "p").unwrap();
            prop_assert!(f.frames.iter().all(|v| v.is_finite()));
        }
    }
}
