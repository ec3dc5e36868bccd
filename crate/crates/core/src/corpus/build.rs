//! Corpus assembly: balanced word choices, padded clean sentences, noisy versions.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grammar::GrammarSpec;
use super::manifest::{AlignedWord, NoiseType, Snr, UtteranceRecord};
use super::mix::{mix_at_snr, MixInfo};
use super::noise::{gen_noise, NoiseProfile};
use super::synth::Synthesizer;
use crate::audio::{ms_to_samples, Waveform};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub utterances: usize,
    pub speakers: u32,
    /// Silence before the first word; gives the noise tracker a speech-free start.
    pub lead_ms: f64,
    pub trail_ms: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            utterances: 600,
            speakers: 4,
            lead_ms: 300.0,
            trail_ms: 200.0,
        }
    }
}

/// Word index per slot for `n` sentences; every slot cycles through its
/// vocabulary as evenly as possible, in a seeded order.
pub fn word_choices(grammar: &GrammarSpec, n: usize, seed: u64) -> Vec<Vec<usize>> {
    let cols: Vec<Vec<usize>> = grammar
        .slots
        .iter()
        .enumerate()
        .map(|(s, slot)| {
            let v = slot.words.len();
            let mut col: Vec<usize> = (0..n).map(|i| i % v).collect();
            col.shuffle(&mut seed::rng(&[seed, 0xC401CE, s as u64]));
            col
        })
        .collect();
    (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

pub fn clean_id(i: usize) -> String {
    format!("s{i:04}")
}

/// Synthesizes one padded clean sentence and its manifest record.
pub fn synth_utterance(synth: &Synthesizer, cfg: &CorpusConfig, i: usize, words: &[usize], seed: u64) -> (UtteranceRecord, Waveform) {
    let sr = synth.config().sample_rate;
    let speaker = (i as u32) % cfg.speakers.max(1);
    let id = clean_id(i);
    let (wave, spans) = synth.sentence_by_index(words, speaker, seed::mix(&[seed, seed::hash_str(&id)]));
    let lead = ms_to_samples(cfg.lead_ms, sr);
    let trail = ms_to_samples(cfg.trail_ms, sr);
    let mut samples = vec![0.0; lead];
    samples.extend_from_slice(&wave.samples);
    samples.extend(std::iter::repeat_n(0.0, trail));
    let grammar = synth.grammar();
    let rec = UtteranceRecord {
        audio_path: format!("clean/{id}.wav"),
        id,
        speaker,
        words: words.iter().enumerate().map(|(s, &w)| grammar.word(s, w).id.clone()).collect(),
        noise_type: NoiseType::None,
        snr_db: Snr::Clean,
        num_samples: samples.len(),
        alignment: spans
            .into_iter()
            .map(|s| AlignedWord {
                word: s.word,
                start: s.start + lead,
                end: s.end + lead,
            })
            .collect(),
        mix: None,
    };
    (rec, Waveform { samples, sample_rate: sr })
}

pub fn synth_corpus(synth: &Synthesizer, cfg: &CorpusConfig, seed: u64) -> Vec<(UtteranceRecord, Waveform)> {
    let choices = word_choices(synth.grammar(), cfg.utterances, seed);
    choices
        .par_iter()
        .enumerate()
        .map(|(i, w)| synth_utterance(synth, cfg, i, w, seed))
        .collect()
}

/// Noisy version of a clean utterance. The noise realization depends only
/// on (seed, utterance, noise type), so every SNR of an utterance shares it.
pub fn mix_utterance(
    clean: &UtteranceRecord,
    wave: &Waveform,
    profile: &NoiseProfile,
    noise_type: NoiseType,
    snr_db: f64,
    seed: u64,
) -> Result<(UtteranceRecord, Waveform)> {
    let mut v = mix_utterance_grid(clean, wave, profile, noise_type, &[snr_db], seed)?;
    Ok(v.remove(0))
}

/// [`mix_utterance`] at several SNRs, generating the noise once.
pub fn mix_utterance_grid(
    clean: &UtteranceRecord,
    wave: &Waveform,
    profile: &NoiseProfile,
    noise_type: NoiseType,
    snrs: &[f64],
    seed: u64,
) -> Result<Vec<(UtteranceRecord, Waveform)>> {
    if noise_type == NoiseType::None {
        return Err(Error::invalid("cannot mix with noise type `none`"));
    }
    let nseed = seed::mix(&[seed, seed::hash_str(&clean.id), seed::hash_str(noise_type.as_str())]);
    let noise = gen_noise(profile, wave.len(), nseed)?;
    let extent = clean.speech_extent();
    snrs.iter()
        .map(|&snr_db| {
            let m = mix_at_snr(wave, &noise, snr_db, Some(extent.clone()))?;
            let snr = Snr::Db(snr_db);
            let id = format!("{}_{}_{}", clean.id, noise_type, snr.label());
            let rec = UtteranceRecord {
                audio_path: format!("{}/{}/{id}.wav", noise_type, snr.label()),
                id,
                noise_type,
                snr_db: snr,
                mix: Some(MixInfo {
                    clean_id: clean.id.clone(),
                    gain: m.gain,
                    scale: m.scale,
                    speech_start: extent.start,
                    speech_end: extent.end,
                }),
                ..clean.clone()
            };
            Ok((rec, m.wave))
        })
        .collect()
}
