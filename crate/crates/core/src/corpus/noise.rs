//! Masker generation: white, speech-shaped, and babble noise.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::grammar::GrammarSpec;
use super::synth::{SynthConfig, Synthesizer};
use crate::audio::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::dsp;
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_LTAS_FFT: usize = 1024;
pub const DEFAULT_BABBLE_TALKERS: usize = 8;

/// Long-term average magnitude spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ltas {
    pub fft_size: usize,
    pub sample_rate: u32,
    pub magnitudes: Vec<f64>,
}

impl Ltas {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || self.magnitudes.len() != self.fft_size / 2 + 1 {
            return Err(Error::NoiseProfile(format!(
                "LTAS has {} bins, expected {}",
                self.magnitudes.len(),
                self.fft_size / 2 + 1
            )));
        }
        if self.magnitudes.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::NoiseProfile("LTAS magnitudes must be finite and positive".into()));
        }
        Ok(())
    }

    /// Magnitude at an arbitrary frequency, linearly interpolated between bins.
    pub fn magnitude_at(&self, hz: f64) -> f64 {
        let pos = (hz * self.fft_size as f64 / f64::from(self.sample_rate)).max(0.0);
        let last = self.magnitudes.len() - 1;
        let i = (pos.floor() as usize).min(last);
        let j = (i + 1).min(last);
        let t = (pos - i as f64).clamp(0.0, 1.0);
        self.magnitudes[i] * (1.0 - t) + self.magnitudes[j] * t
    }
}

/// Average magnitude spectrum over all Hann-windowed frames (50% overlap)
/// of all signals. Signals shorter than one frame contribute one zero-padded
/// frame. A tiny floor keeps every bin strictly positive.
pub fn compute_ltas(corpus: &[Waveform], fft_size: usize) -> Result<Ltas> {
    let first = corpus.first().ok_or_else(|| Error::invalid("LTAS needs a non-empty corpus"))?;
    let win = dsp::hann_periodic(fft_size);
    let hop = fft_size / 2;
    let mut acc = vec![0.0; fft_size / 2 + 1];
    let mut frames = 0usize;
    let mut buf = vec![0.0; fft_size];
    for w in corpus {
        let x = &w.samples;
        let mut start = 0;
        loop {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = x.get(start + i).copied().unwrap_or(0.0) * win[i];
            }
            for (a, c) in acc.iter_mut().zip(dsp::rfft(&buf, fft_size)) {
                *a += c.norm();
            }
            frames += 1;
            start += hop;
            if start + fft_size > x.len() {
                break;
            }
        }
    }
    let peak = acc.iter().cloned().fold(0.0, f64::max) / frames as f64;
    let floor = (peak * 1e-6).max(1e-12);
    Ok(Ltas {
        fft_size,
        sample_rate: first.sample_rate,
        magnitudes: acc.into_iter().map(|a| (a / frames as f64).max(floor)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum NoiseProfile {
    White,
    Ssn {
        ltas: Ltas,
    },
    Babble {
        talkers: usize,
        grammar: GrammarSpec,
        synth: SynthConfig,
    },
}

impl NoiseProfile {
    pub fn tag(&self) -> &'static str {
        match self {
            NoiseProfile::White => "white",
            NoiseProfile::Ssn { .. } => "ssn",
            NoiseProfile::Babble { .. } => "babble",
        }
    }

    pub fn babble(grammar: GrammarSpec, synth: SynthConfig) -> Self {
        NoiseProfile::Babble {
            talkers: DEFAULT_BABBLE_TALKERS,
            grammar,
            synth,
        }
    }
}

/// Generates `length` samples of noise with unit RMS.
pub fn gen_noise(profile: &NoiseProfile, length: usize, seed: u64) -> Result<Waveform> {
    if length == 0 {
        return Err(Error::invalid("noise length must be positive"));
    }
    let mut rng = seed::rng(&[seed, 0x401_5E]);
    let (mut samples, sample_rate) = match profile {
        NoiseProfile::White => (gaussian(&mut rng, length), DEFAULT_SAMPLE_RATE),
        NoiseProfile::Ssn { ltas } => {
            ltas.validate()?;
            (shape(&gaussian(&mut rng, length), ltas), ltas.sample_rate)
        }
        NoiseProfile::Babble { talkers, grammar, synth } => {
            if *talkers == 0 {
                return Err(Error::NoiseProfile("babble needs at least one talker".into()));
            }
            let synth = Synthesizer::new(grammar.clone(), synth.clone()).map_err(|e| Error::NoiseProfile(e.to_string()))?;
            (babble(&synth, *talkers, length, &mut rng), synth.config().sample_rate)
        }
    };
    let r = dsp::rms(&samples);
    if r > 0.0 {
        for v in &mut samples {
            *v /= r;
        }
    }
    Waveform::new(samples, sample_rate)
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Frequency-domain filtering of the whole signal at once, so the resulting
/// spectrum follows the LTAS at full resolution.
fn shape(white: &[f64], ltas: &Ltas) -> Vec<f64> {
    let n = white.len();
    let mut buf: Vec<Complex64> = white.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    dsp::fft(&mut buf);
    let sr = f64::from(ltas.sample_rate);
    for (k, b) in buf.iter_mut().enumerate() {
        let kk = if k <= n / 2 { k } else { n - k };
        *b *= ltas.magnitude_at(kk as f64 * sr / n as f64);
    }
    dsp::ifft(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

fn babble(synth: &Synthesizer, talkers: usize, length: usize, rng: &mut impl Rng) -> Vec<f64> {
    let grammar = synth.grammar();
    let mut out = vec![0.0; length];
    for _ in 0..talkers {
        let speaker = rng.random_range(0..4u32);
        let mut stream = Vec::with_capacity(length);
        while stream.len() < length {
            let words: Vec<usize> = (0..grammar.slots.len())
                .map(|s| rng.random_range(0..grammar.vocab_size(s)))
                .collect();
            let (w, _) = synth.sentence_by_index(&words, speaker, rng.random());
            stream.extend(w.samples);
        }
        let offset = rng.random_range(0..stream.len());
        for (i, o) in out.iter_mut().enumerate() {
            *o += stream[(offset + i) % stream.len()];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(hz: f64, n: usize) -> Waveform {
        let s = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * hz * i as f64 / 25_000.0).sin())
            .collect();
        Waveform::new(s, 25_000).unwrap()
    }

    #[test]
    fn white_noise_kurtosis() {
        let w = gen_noise(&NoiseProfile::White, 25_000, 3).unwrap();
        let m = w.samples.iter().sum::<f64>() / w.len() as f64;
        let m2 = w.samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / w.len() as f64;
        let m4 = w.samples.iter().map(|x| (x - m).powi(4)).sum::<f64>() / w.len() as f64;
        let k = m4 / (m2 * m2);
        assert!((2.7..=3.3).contains(&k), "kurtosis {k}");
    }

    #[test]
    fn requested_length_and_determinism() {
        let a = gen_noise(&NoiseProfile::White, 12_345, 9).unwrap();
        assert_eq!(a.len(), 12_345);
        assert_eq!(a, gen_noise(&NoiseProfile::White, 12_345, 9).unwrap());
        assert!(gen_noise(&NoiseProfile::White, 0, 9).is_err());
    }

    #[test]
    fn ltas_peak_at_tone_frequency() {
        let l = compute_ltas(&[tone(1000.0, 25_000)], 1024).unwrap();
        let peak = l.magnitudes.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let hz = peak as f64 * 25_000.0 / 1024.0;
        assert!((hz - 1000.0).abs() < 25_000.0 / 1024.0, "{hz}");
        assert!(l.magnitudes.iter().all(|&m| m > 0.0));
        l.validate().unwrap();
    }

    #[test]
    fn duplicated_corpus_same_ltas() {
        let a = tone(500.0, 8000);
        let b = tone(2300.0, 12000);
        let one = compute_ltas(&[a.clone(), b.clone()], 1024).unwrap();
        let two = compute_ltas(&[a.clone(), a, b.clone(), b], 1024).unwrap();
        for (x, y) in one.magnitudes.iter().zip(&two.magnitudes) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn invalid_ltas_rejected() {
        let bad = NoiseProfile::Ssn {
            ltas: Ltas {
                fft_size: 8,
                sample_rate: 25_000,
                magnitudes: vec![1.0, 0.0, 1.0, 1.0, 1.0],
            },
        };
        assert!(gen_noise(&bad, 100, 0).is_err());
    }

    #[test]
    fn babble_is_unit_rms_and_deterministic() {
        let p = NoiseProfile::babble(GrammarSpec::grid(), SynthConfig::default());
        let a = gen_noise(&p, 30_000, 4).unwrap();
        assert!((dsp::rms(&a.samples) - 1.0).abs() < 1e-9);
        assert_eq!(a, gen_noise(&p, 30_000, 4).unwrap());
    }
}
