use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::dsp::mean_square;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MixResult {
    pub wave: Waveform,
    /// Gain applied to the noise before adding.
    pub gain: f64,
    /// Global rescale applied afterwards to keep |x| ≤ 1 (1.0 if none).
    pub scale: f64,
}

/// Parameters needed to undo or audit a mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixInfo {
    pub clean_id: String,
    pub gain: f64,
    pub scale: f64,
    pub speech_start: usize,
    pub speech_end: usize,
}

/// Adds `noise` to `speech` at exactly `snr_db`, with both powers measured
/// over `extent` (the whole speech signal when `None`).
pub fn mix_at_snr(speech: &Waveform, noise: &Waveform, snr_db: f64, extent: Option<Range<usize>>) -> Result<MixResult> {
    if !snr_db.is_finite() {
        return Err(Error::invalid("SNR must be finite"));
    }
    if noise.len() < speech.len() {
        return Err(Error::TooShort {
            needed: speech.len(),
            got: noise.len(),
        });
    }
    if noise.sample_rate != speech.sample_rate {
        return Err(Error::invalid("speech and noise sample rates differ"));
    }
    let ext = extent.unwrap_or(0..speech.len());
    if ext.start >= ext.end || ext.end > speech.len() {
        return Err(Error::invalid("speech extent out of range"));
    }
    let ps = mean_square(&speech.samples[ext.clone()]);
    if ps <= 0.0 {
        return Err(Error::ZeroPower { what: "speech" });
    }
    let pn = mean_square(&noise.samples[ext]);
    if pn <= 0.0 {
        return Err(Error::ZeroPower { what: "noise" });
    }
    let gain = (ps / pn / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut samples: Vec<f64> = speech.samples.iter().zip(&noise.samples).map(|(s, n)| s + gain * n).collect();
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    if scale != 1.0 {
        for v in &mut samples {
            *v *= scale;
        }
    }
    Ok(MixResult {
        wave: Waveform::new(samples, speech.sample_rate)?,
        gain,
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(v: f64, n: usize) -> Waveform {
        Waveform::new(vec![v; n], 25_000).unwrap()
    }

    #[test]
    fn closed_form_gains() {
        let s = constant(0.1, 100);
        let n = constant(-0.1, 100);
        assert!((mix_at_snr(&s, &n, 0.0, None).unwrap().gain - 1.0).abs() < 1e-12);
        let g = mix_at_snr(&s, &n, 6.0, None).unwrap().gain;
        assert!((g - 10f64.powf(-6.0 / 20.0)).abs() < 1e-12);
        assert!((g - 0.5012).abs() < 1e-4);
    }

    #[test]
    fn errors() {
        let s = constant(0.1, 100);
        assert!(mix_at_snr(&s, &constant(0.1, 50), 0.0, None).is_err());
        assert!(mix_at_snr(&constant(0.0, 100), &s, 0.0, None).is_err());
        assert!(mix_at_snr(&s, &constant(0.0, 100), 0.0, None).is_err());
        assert!(mix_at_snr(&s, &s, f64::NAN, None).is_err());
    }

    #[test]
    fn peak_limited_by_rescale() {
        let s = constant(0.9, 10);
        let r = mix_at_snr(&s, &constant(0.9, 10), -6.0, None).unwrap();
        assert!(r.scale < 1.0);
        assert!(r.wave.samples.iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }

    proptest! {
        #[test]
        fn measured_snr_matches_target(
            speech in prop::collection::vec(-0.5f64..0.5, 64..256),
            noise_seed in 0u64..1000,
            snr in -20.0f64..40.0,
            lead in 0usize..16,
        ) {
            prop_assume!(mean_square(&speech[lead..]) > 1e-6);
            let n = speech.len() + 10;
            let mut r = crate::seed::rng(&[noise_seed]);
            let noise: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut r, -1.0..1.0)).collect();
            let s = Waveform::new(speech.clone(), 25_000).unwrap();
            let nz = Waveform::new(noise.clone(), 25_000).unwrap();
            let ext = lead..speech.len();
            let m = mix_at_snr(&s, &nz, snr, Some(ext.clone())).unwrap();
            let ps = mean_square(&speech[ext.clone()]);
            let resid: Vec<f64> = noise[ext].iter().map(|v| v * m.gain).collect();
            let measured = 10.0 * (ps / mean_square(&resid)).log10();
            prop_assert!((measured - snr).abs() < 0.01);
            // the output itself: (mix/scale − speech) over the extent is the scaled noise
            let back: Vec<f64> = m.wave.samples[lead..].iter().zip(&speech[lead..]).map(|(x, s)| x / m.scale - s).collect();
            let measured_out = 10.0 * (ps / mean_square(&back)).log10();
            prop_assert!((measured_out - snr).abs() < 0.01);
        }
    }
}
