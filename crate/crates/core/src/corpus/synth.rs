//! Parametric stand-in for recorded matrix sentences.
//!
//! Each word is a sequence of phone-like units. A unit carries formant
//! targets (or a frication band) drawn from a small inventory and perturbed
//! per word and position, so every word in a slot has its own spectral
//! trajectory. A source-filter synthesizer (pulse train plus noise through
//! second-order resonators) renders the trajectory for a given speaker.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::grammar::{GrammarSpec, SLOT_COUNT};
use crate::audio::{ms_to_samples, Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
enum PhoneClass {
    Vowel,
    Nasal,
    Fricative,
    VoicedFricative,
}

#[derive(Debug, Clone, Copy)]
struct Prototype {
    class: PhoneClass,
    formants: [f64; 3],
    fric_hz: f64,
    fric_bw: f64,
}

const fn vowel(f1: f64, f2: f64, f3: f64) -> Prototype {
    Prototype {
        class: PhoneClass::Vowel,
        formants: [f1, f2, f3],
        fric_hz: 4000.0,
        fric_bw: 2000.0,
    }
}

const INVENTORY: [Prototype; 15] = [
    vowel(270.0, 2290.0, 3010.0),
    vowel(390.0, 1990.0, 2550.0),
    vowel(530.0, 1840.0, 2480.0),
    vowel(660.0, 1720.0, 2410.0),
    vowel(730.0, 1090.0, 2440.0),
    vowel(570.0, 840.0, 2410.0),
    vowel(440.0, 1020.0, 2240.0),
    vowel(300.0, 870.0, 2240.0),
    vowel(520.0, 1190.0, 2390.0),
    vowel(490.0, 1350.0, 1690.0),
    Prototype {
        class: PhoneClass::Nasal,
        formants: [280.0, 1000.0, 2200.0],
        fric_hz: 4000.0,
        fric_bw: 2000.0,
    },
    Prototype {
        class: PhoneClass::Nasal,
        formants: [280.0, 1700.0, 2600.0],
        fric_hz: 4000.0,
        fric_bw: 2000.0,
    },
    Prototype {
        class: PhoneClass::Fricative,
        formants: [500.0, 1500.0, 2500.0],
        fric_hz: 5500.0,
        fric_bw: 2500.0,
    },
    Prototype {
        class: PhoneClass::Fricative,
        formants: [500.0, 1800.0, 2500.0],
        fric_hz: 3000.0,
        fric_bw: 1200.0,
    },
    Prototype {
        class: PhoneClass::VoicedFricative,
        formants: [300.0, 1500.0, 2500.0],
        fric_hz: 4800.0,
        fric_bw: 2500.0,
    },
];

const BANDWIDTHS: [f64; 3] = [80.0, 110.0, 150.0];
const VOICED_GAIN: f64 = 0.02;
const FRICATION_GAIN: f64 = 0.35;

/// Resolved acoustic target of one phone-like unit.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PhoneTarget {
    formants: [f64; 3],
    voicing: f64,
    frication: f64,
    fric_hz: f64,
    fric_bw: f64,
}

impl PhoneTarget {
    fn lerp(&self, other: &Self, t: f64) -> Self {
        let l = |a: f64, b: f64| a + (b - a) * t;
        Self {
            formants: [
                l(self.formants[0], other.formants[0]),
                l(self.formants[1], other.formants[1]),
                l(self.formants[2], other.formants[2]),
            ],
            voicing: l(self.voicing, other.voicing),
            frication: l(self.frication, other.frication),
            fric_hz: l(self.fric_hz, other.fric_hz),
            fric_bw: l(self.fric_bw, other.fric_bw),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub sample_rate: u32,
    /// Nominal duration of one phone-like unit.
    pub phoneme_ms: f64,
    /// Silence between consecutive words of a sentence.
    pub gap_ms: f64,
    /// Maximum relative word-duration jitter (at most 0.10).
    pub jitter: f64,
    /// RMS of the active (non-gap) part of a synthesized sentence.
    pub speech_rms: f64,
    /// Seed of the lexicon (which phone sequence each word gets).
    pub lexicon_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            phoneme_ms: 90.0,
            gap_ms: 40.0,
            jitter: 0.05,
            speech_rms: 0.05,
            lexicon_seed: 7,
        }
    }
}

/// Word boundary inside a synthesized sentence, in samples, half-open.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSpan {
    pub word: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy)]
struct Voice {
    f0: f64,
    formant_scale: f64,
}

fn voice(speaker: u32) -> Voice {
    const TABLE: [(f64, f64); 4] = [(105.0, 0.97), (130.0, 1.0), (185.0, 1.03), (215.0, 1.06)];
    match TABLE.get(speaker as usize) {
        Some(&(f0, formant_scale)) => Voice { f0, formant_scale },
        None => {
            let u = seed::unit(&[0x5EED, u64::from(speaker)]);
            let v = seed::unit(&[0x5EED, u64::from(speaker), 1]);
            Voice {
                f0: 100.0 + 130.0 * u,
                formant_scale: 0.96 + 0.11 * v,
            }
        }
    }
}

/// Klatt-style resonator with unit gain at DC.
#[derive(Debug, Clone, Copy, Default)]
struct Resonator {
    a: f64,
    b: f64,
    c: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn tune(&mut self, freq: f64, bw: f64, sr: f64) {
        let t = 1.0 / sr;
        self.c = -(-2.0 * PI * bw * t).exp();
        self.b = 2.0 * (-PI * bw * t).exp() * (2.0 * PI * freq * t).cos();
        self.a = 1.0 - self.b - self.c;
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.a * x + self.b * self.y1 + self.c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Constant-peak-gain band-pass biquad.
#[derive(Debug, Clone, Copy, Default)]
struct BandPass {
    b0: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl BandPass {
    fn tune(&mut self, freq: f64, bw: f64, sr: f64) {
        let nyq = sr / 2.0;
        let f = freq.min(0.95 * nyq);
        let w0 = 2.0 * PI * f / sr;
        let q = (f / bw).max(0.3);
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        self.b0 = alpha / a0;
        self.a1 = -2.0 * w0.cos() / a0;
        self.a2 = (1.0 - alpha) / a0;
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * (x - self.x2) - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Sentence and word synthesizer bound to one grammar.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    grammar: GrammarSpec,
    config: SynthConfig,
    /// `[slot][word] -> phone targets`
    lexicon: Vec<Vec<Vec<PhoneTarget>>>,
}

impl Synthesizer {
    pub fn new(grammar: GrammarSpec, config: SynthConfig) -> Result<Self> {
        grammar.validate()?;
        if !(0.0..=0.10).contains(&config.jitter) {
            return Err(Error::invalid("duration jitter must lie in [0, 0.10]"));
        }
        if config.phoneme_ms <= 0.0 || config.gap_ms < 0.0 || config.speech_rms <= 0.0 {
            return Err(Error::invalid("phoneme_ms and speech_rms must be positive, gap_ms non-negative"));
        }
        let lexicon = build_lexicon(&grammar, config.lexicon_seed)?;
        Ok(Self { grammar, config, lexicon })
    }

    pub fn grammar(&self) -> &GrammarSpec {
        &self.grammar
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    /// Phone-unit length in samples for one word instance (jitter applied).
    fn phone_len(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
        let factor = 1.0 + self.config.jitter * u;
        ms_to_samples(self.config.phoneme_ms * factor, self.config.sample_rate).max(1)
    }

    /// Synthesizes one word. Deterministic in `(slot, word_id, speaker, seed)`.
    pub fn word_waveform(&self, slot: usize, word_id: &str, speaker: u32, seed: u64) -> Result<Waveform> {
        let index = self.grammar.word_index(slot, word_id)?;
        Ok(self.word_by_index(slot, index, speaker, seed))
    }

    fn word_by_index(&self, slot: usize, index: usize, speaker: u32, seed: u64) -> Waveform {
        let mut rng = seed::rng(&[seed, slot as u64, index as u64, u64::from(speaker)]);
        let phone_len = self.phone_len(&mut rng);
        let samples = render(
            &self.lexicon[slot][index],
            voice(speaker),
            phone_len,
            f64::from(self.config.sample_rate),
            &mut rng,
        );
        Waveform {
            samples,
            sample_rate: self.config.sample_rate,
        }
    }

    /// Synthesizes a sentence from one word id per slot, with silent gaps
    /// between words, normalized to the configured speech RMS.
    pub fn sentence(&self, words: &[String], speaker: u32, seed: u64) -> Result<(Waveform, Vec<WordSpan>)> {
        if words.len() != SLOT_COUNT {
            return Err(Error::invalid(format!("sentence needs {SLOT_COUNT} words, got {}", words.len())));
        }
        let indices = words
            .iter()
            .enumerate()
            .map(|(slot, w)| self.grammar.word_index(slot, w))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.sentence_by_index(&indices, speaker, seed))
    }

    pub fn sentence_by_index(&self, indices: &[usize], speaker: u32, seed: u64) -> (Waveform, Vec<WordSpan>) {
        let gap = ms_to_samples(self.config.gap_ms, self.config.sample_rate);
        let mut samples = Vec::new();
        let mut spans = Vec::with_capacity(indices.len());
        for (slot, &idx) in indices.iter().enumerate() {
            if slot > 0 {
                samples.extend(std::iter::repeat_n(0.0, gap));
            }
            let w = self.word_by_index(slot, idx, speaker, seed::mix(&[seed, slot as u64]));
            let start = samples.len();
            samples.extend_from_slice(&w.samples);
            spans.push(WordSpan {
                word: self.grammar.word(slot, idx).id.clone(),
                start,
                end: samples.len(),
            });
        }
        let active: f64 = spans
            .iter()
            .map(|s| samples[s.start..s.end].iter().map(|v| v * v).sum::<f64>())
            .sum();
        let n_active: usize = spans.iter().map(|s| s.end - s.start).sum();
        let rms = (active / n_active.max(1) as f64).sqrt();
        if rms > 0.0 {
            let g = self.config.speech_rms / rms;
            for v in &mut samples {
                *v *= g;
            }
        }
        (
            Waveform {
                samples,
                sample_rate: self.config.sample_rate,
            },
            spans,
        )
    }
}

fn build_lexicon(grammar: &GrammarSpec, lexicon_seed: u64) -> Result<Vec<Vec<Vec<PhoneTarget>>>> {
    grammar
        .slots
        .iter()
        .enumerate()
        .map(|(s, slot)| {
            let mut sequences: Vec<Vec<usize>> = Vec::new();
            slot.words
                .iter()
                .enumerate()
                .map(|(w, entry)| {
                    // Prefer sequences differing from every earlier word in all
                    // positions; relax one position at a time when that is impossible.
                    let p = entry.phonemes;
                    let seq = (1..=p)
                        .rev()
                        .find_map(|min_dist| {
                            (0..2_000u64)
                                .map(|attempt| draw_sequence(p, &[lexicon_seed, s as u64, w as u64, min_dist as u64, attempt]))
                                .find(|seq| sequences.iter().all(|o| distance(o, seq) >= min_dist))
                        })
                        .ok_or_else(|| Error::Grammar(format!("cannot give word `{}` a distinct phone sequence", entry.id)))?;
                    sequences.push(seq.clone());
                    Ok(seq
                        .iter()
                        .enumerate()
                        .map(|(pos, &p)| {
                            let proto = INVENTORY[p];
                            let mut rng = seed::rng(&[lexicon_seed, 0xF0, s as u64, w as u64, pos as u64]);
                            let mut formants = proto.formants;
                            for f in &mut formants {
                                *f *= 1.0 + 0.05 * (2.0 * rng.random::<f64>() - 1.0);
                            }
                            let (voicing, frication) = match proto.class {
                                PhoneClass::Vowel => (1.0, 0.0),
                                PhoneClass::Nasal => (0.45, 0.0),
                                PhoneClass::Fricative => (0.0, 1.0),
                                PhoneClass::VoicedFricative => (0.35, 0.7),
                            };
                            PhoneTarget {
                                formants,
                                voicing,
                                frication,
                                fric_hz: proto.fric_hz * (1.0 + 0.05 * (2.0 * rng.random::<f64>() - 1.0)),
                                fric_bw: proto.fric_bw,
                            }
                        })
                        .collect())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

const VOWELS: usize = 10;

/// Alternating vowel/consonant sequence with a random phase, so every word
/// carries at least one vowel and no two consonants are adjacent.
fn draw_sequence(p: usize, key: &[u64]) -> Vec<usize> {
    let mut rng = seed::rng(key);
    let phase = if p == 1 { 0 } else { rng.random_range(0..2usize) };
    let mut seq: Vec<usize> = Vec::with_capacity(p);
    for pos in 0..p {
        let vowel = (pos + phase) % 2 == 0;
        loop {
            let ph = if vowel {
                rng.random_range(0..VOWELS)
            } else {
                rng.random_range(VOWELS..INVENTORY.len())
            };
            if pos < 2 || seq[pos - 2] != ph {
                seq.push(ph);
                break;
            }
        }
    }
    seq
}

/// Positional mismatches; sequences of different length always count as distinct.
fn distance(a: &[usize], b: &[usize]) -> usize {
    if a.len() != b.len() {
        return usize::MAX;
    }
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn render(phones: &[PhoneTarget], voice: Voice, phone_len: usize, sr: f64, rng: &mut impl Rng) -> Vec<f64> {
    const BLOCK: usize = 25;
    let n = phones.len() * phone_len;
    let mut out = vec![0.0; n];
    let mut phase: f64 = rng.random();
    let vib_phase: f64 = rng.random::<f64>() * 2.0 * PI;
    let mut glottal = 0.0;
    let mut res = [Resonator::default(); 3];
    let mut fric = BandPass::default();

    for b in (0..n).step_by(BLOCK) {
        let center = (b + BLOCK / 2).min(n - 1) as f64 + 0.5;
        let pos = (center / phone_len as f64 - 0.5).clamp(0.0, (phones.len() - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(phones.len() - 1);
        let target = phones[i0].lerp(&phones[i1], pos - i0 as f64);
        for (k, r) in res.iter_mut().enumerate() {
            r.tune(target.formants[k] * voice.formant_scale, BANDWIDTHS[k], sr);
        }
        fric.tune(target.fric_hz * voice.formant_scale, target.fric_bw, sr);

        for i in b..(b + BLOCK).min(n) {
            let t = i as f64 / sr;
            let f0 = voice.f0 * (1.0 + 0.03 * (2.0 * PI * 4.0 * t + vib_phase).sin()) * (1.0 - 0.08 * i as f64 / n as f64);
            phase += f0 / sr;
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            glottal = 0.94 * glottal + pulse;
            let mut v = glottal * target.voicing;
            for r in &mut res {
                v = r.process(v);
            }
            let noise: f64 = rng.sample(StandardNormal);
            let f = fric.process(noise * target.frication);
            out[i] = VOICED_GAIN * v + FRICATION_GAIN * f;
        }
    }

    let fade = ((0.005 * sr) as usize).min(n / 2);
    for i in 0..fade {
        let g = 0.5 - 0.5 * (PI * i as f64 / fade as f64).cos();
        out[i] *= g;
        out[n - 1 - i] *= g;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(jitter: f64) -> Synthesizer {
        Synthesizer::new(
            GrammarSpec::grid(),
            SynthConfig {
                jitter,
                ..SynthConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn three_phoneme_word_duration_without_jitter() {
        let s = synth(0.0);
        let w = s.word_waveform(0, "bin", 0, 1).unwrap();
        assert_eq!(w.len(), 6750);
    }

    #[test]
    fn jittered_duration_within_ten_percent() {
        let s = synth(0.10);
        for seed in 0..20 {
            let w = s.word_waveform(0, "bin", 1, seed).unwrap();
            let ratio = w.len() as f64 / 6750.0;
            assert!((0.9..=1.1).contains(&ratio), "{ratio}");
        }
    }

    #[test]
    fn word_synthesis_is_deterministic() {
        let s = synth(0.05);
        let a = s.word_waveform(3, "q", 2, 99).unwrap();
        let b = s.word_waveform(3, "q", 2, 99).unwrap();
        assert_eq!(a, b);
        assert!(s.word_waveform(3, "purple", 2, 99).is_err());
    }

    #[test]
    fn sentence_layout_and_gaps() {
        let g = GrammarSpec::with_sizes([4, 4, 4, 25, 10, 4]).unwrap();
        let s = Synthesizer::new(
            g,
            SynthConfig {
                jitter: 0.0,
                ..SynthConfig::default()
            },
        )
        .unwrap();
        let words: Vec<String> = ["bin", "blue", "with", "q", "one", "soon"].iter().map(|w| w.to_string()).collect();
        let (wave, spans) = s.sentence(&words, 0, 5).unwrap();
        // every chosen word has 3 phonemes: 6 x 270 ms + 5 x 40 ms
        assert_eq!(wave.len(), ms_to_samples(1820.0, 25_000));
        for k in 0..5 {
            assert_eq!(spans[k].end + 1000, spans[k + 1].start);
            assert!(wave.samples[spans[k].end..spans[k + 1].start].iter().all(|&v| v == 0.0));
        }
        assert_eq!(spans[5].end, wave.len());
        let (again, spans2) = s.sentence(&words, 0, 5).unwrap();
        assert_eq!(spans, spans2);
        assert_eq!(wave, again);
    }

    #[test]
    fn sentence_rejects_wrong_word_count() {
        let s = synth(0.0);
        assert!(s.sentence(&["bin".to_string()], 0, 0).is_err());
    }

    #[test]
    fn lexicon_sequences_are_distinct_within_slot() {
        let s = synth(0.0);
        for slot in &s.lexicon {
            for (i, a) in slot.iter().enumerate() {
                for b in &slot[..i] {
                    assert_ne!(a, b);
                }
            }
        }
    }
}
