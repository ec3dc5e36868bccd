//! Per-keyword measure extraction and the measures CSV.

use std::ops::Range;
use std::path::Path;

use ndarray::{s, ArrayView2};
use serde::{Deserialize, Serialize};

use super::scores::{dispersion, entropy, loglik_ratio, nld, score_all_models, tad, DEFAULT_DISPERSION_N};
use super::snr::{separate, SnrConfig};
use super::stoi::{stoi_10k, STOI_RATE};
use crate::asr::{samples_to_frames, Alignment, DecodeConfig, ModelSet};
use crate::audio::Waveform;
use crate::corpus::{GrammarSpec, UtteranceRecord};
use crate::dsp::resample;
use crate::features::FeatureConfig;
use crate::io;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentSource {
    /// Keyword segments from the reference alignment.
    Reference,
    /// Keyword segments from free grammar decoding.
    Recognized,
}

impl AlignmentSource {
    pub fn as_str(self) -> &'static str {
        match self {
            AlignmentSource::Reference => "reference",
            AlignmentSource::Recognized => "recognized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureRecord {
    pub utt_id: String,
    pub slot: usize,
    pub true_word: String,
    pub rec_word: String,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "TAD")]
    pub tad: f64,
    #[serde(rename = "NLD")]
    pub nld: f64,
    #[serde(rename = "SNRhat")]
    pub snr_hat: f64,
    #[serde(rename = "STOI")]
    pub stoi: f64,
    pub alignment_source: AlignmentSource,
    /// Listener correctness, filled in after simulation.
    pub label: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasureConfig {
    pub dispersion_n: usize,
    pub snr: SnrConfig,
    /// Keyword windows for STOI are widened to at least this duration.
    pub stoi_min_ms: f64,
    pub decode: DecodeConfig,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            dispersion_n: DEFAULT_DISPERSION_N,
            snr: SnrConfig::default(),
            stoi_min_ms: 500.0,
            decode: DecodeConfig::default(),
        }
    }
}

/// Everything known about one noisy utterance.
pub struct UtteranceInput<'a> {
    pub record: &'a UtteranceRecord,
    pub features: ArrayView2<'a, f64>,
    pub noisy: &'a Waveform,
    pub clean: &'a Waveform,
}

/// Widens `[a, b)` symmetrically to at least `min` items within `[0, n)`.
fn widen(a: usize, b: usize, min: usize, n: usize) -> (usize, usize) {
    if b - a >= min || n <= min {
        return if n <= min { (0, n) } else { (a, b) };
    }
    let extra = min - (b - a);
    let mut lo = a.saturating_sub(extra / 2);
    let mut hi = (lo + min).min(n);
    lo = hi - min;
    if lo > a {
        lo = a;
        hi = lo + min;
    }
    (lo, hi)
}

fn frames_to_samples(seg: (usize, usize), config: &FeatureConfig, len: usize) -> Range<usize> {
    let start = seg.0 * config.frame_shift();
    let end = ((seg.1.max(seg.0 + 1) - 1) * config.frame_shift() + config.frame_len()).min(len);
    start.min(end.saturating_sub(1))..end
}

/// Measures for every keyword of one utterance, for each requested
/// alignment source (source-major, then slot order).
pub fn extract_measures(
    input: &UtteranceInput<'_>,
    grammar: &GrammarSpec,
    models: &ModelSet,
    feature_config: &FeatureConfig,
    sources: &[AlignmentSource],
    config: &MeasureConfig,
) -> Result<Vec<MeasureRecord>> {
    let rec = input.record;
    let obs = input.features;
    let n_frames = obs.nrows();
    if input.noisy.len() != input.clean.len() {
        return Err(Error::invalid(format!("{}: clean and noisy lengths differ", rec.id)));
    }
    let words: Vec<usize> = rec
        .words
        .iter()
        .enumerate()
        .map(|(s, w)| grammar.word_index(s, w))
        .collect::<Result<_>>()?;
    let reference: Vec<(usize, usize)> = rec
        .alignment
        .iter()
        .map(|a| samples_to_frames(a.start, a.end, feature_config.frame_len(), feature_config.frame_shift(), n_frames))
        .collect();

    let separation = separate(input.noisy, &config.snr)?;
    let rate = input.noisy.sample_rate;
    let x10 = resample(&input.clean.samples, rate, STOI_RATE);
    let y10 = resample(&input.noisy.samples, rate, STOI_RATE);
    let min_stoi = (config.stoi_min_ms * STOI_RATE as f64 / 1000.0).round() as usize;

    let mut out = Vec::new();
    for &source in sources {
        let alignment: Alignment = match source {
            AlignmentSource::Reference => models.force_align(&words, obs, &config.decode)?,
            AlignmentSource::Recognized => models.decode(obs, &config.decode)?,
        };
        for slot in grammar.keyword_slots() {
            let found = alignment
                .word_in_slot(slot)
                .ok_or_else(|| Error::invalid(format!("{}: alignment lacks slot {slot}", rec.id)))?;
            let decoded = (found.start, found.end);
            let (segment, boundaries) = match source {
                AlignmentSource::Reference => (reference[slot], decoded),
                AlignmentSource::Recognized => (decoded, decoded),
            };
            let slot_models = models.slot_models(slot);
            let longest = slot_models.iter().map(|h| h.n_states()).max().unwrap_or(1);
            let (a, b) = widen(segment.0, segment.1, longest, n_frames);
            let scores = score_all_models(slot, &slot_models, obs.slice(s![a..b, ..]))?;

            let rec_word = match source {
                AlignmentSource::Reference => scores.best().expect("non-empty slot"),
                AlignmentSource::Recognized => found.word.expect("word segment"),
            };
            let samples = frames_to_samples(segment, feature_config, input.noisy.len());
            let snr_hat = separation.snr_db(samples)?;

            let span = &rec.alignment[slot];
            let (sa, sb) = (
                span.start * STOI_RATE as usize / rate as usize,
                span.end * STOI_RATE as usize / rate as usize,
            );
            let (wa, wb) = widen(sa, sb.max(sa + 1), min_stoi, x10.len());
            let stoi = match stoi_10k(&x10[wa..wb], &y10[wa..wb]) {
                Err(Error::TooShort { .. }) => stoi_10k(&x10, &y10)?,
                other => other?,
            };

            out.push(MeasureRecord {
                utt_id: rec.id.clone(),
                slot,
                true_word: rec.words[slot].clone(),
                rec_word: grammar.word(slot, rec_word).id.clone(),
                d: dispersion(&scores, config.dispersion_n)?,
                h: entropy(&scores)?,
                l: loglik_ratio(&scores)?,
                tad: tad(boundaries, reference[slot])?,
                nld: nld(&scores, words[slot], b - a)?,
                snr_hat,
                stoi,
                alignment_source: source,
                label: None,
            });
        }
    }
    Ok(out)
}

pub fn write_measures(path: impl AsRef<Path>, records: &[MeasureRecord]) -> Result<()> {
    io::write_csv(path.as_ref(), records)
}

pub fn read_measures(path: impl AsRef<Path>) -> Result<Vec<MeasureRecord>> {
    io::read_csv(path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widening() {
        assert_eq!(widen(10, 20, 5, 100), (10, 20));
        assert_eq!(widen(10, 12, 6, 100), (8, 14));
        assert_eq!(widen(0, 2, 6, 100), (0, 6));
        assert_eq!(widen(97, 99, 6, 100), (94, 100));
        assert_eq!(widen(1, 2, 6, 4), (0, 4));
        for (a, b) in [(3, 4), (0, 1), (50, 51), (95, 100)] {
            let (lo, hi) = widen(a, b, 9, 100);
            assert_eq!(hi - lo, 9);
            assert!(lo <= a && hi >= b);
        }
    }

    #[test]
    fn csv_round_trip() {
        let r = MeasureRecord {
            utt_id: "s0001_ssn_m4".into(),
            slot: 3,
            true_word: "b".into(),
            rec_word: "d".into(),
            d: 12.5,
            h: 0.25,
            l: 3.0,
            tad: 0.1,
            nld: -0.2,
            snr_hat: -3.75,
            stoi: 0.61,
            alignment_source: AlignmentSource::Recognized,
            label: Some(true),
        };
        let mut other = r.clone();
        other.label = None;
        other.alignment_source = AlignmentSource::Reference;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_measures(&p, &[r.clone(), other.clone()]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("utt_id,slot,true_word,rec_word,D,H,L,TAD,NLD,SNRhat,STOI,alignment_source,label\n"));
        assert_eq!(read_measures(&p).unwrap(), vec![r, other]);
    }
}
