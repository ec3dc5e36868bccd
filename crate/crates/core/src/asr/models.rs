use std::fs;
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::decode::{viterbi_decode, Alignment, DecodeConfig};
use super::hmm::{HmmParams, WordHmm};
use crate::corpus::{GrammarSpec, NoiseType, Snr};
use crate::error::{Error, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Noise condition a model set is trained for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub noise: NoiseType,
    pub snr: Snr,
}

impl Condition {
    pub fn key(&self) -> String {
        format!("{}_{}", self.noise, self.snr.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    pub fold: usize,
    pub iterations: usize,
    pub final_log_likelihood: f64,
    /// Total training log-likelihood per re-estimation iteration.
    pub history: Vec<f64>,
    /// Indices into `history` where a new stage (mixture split) begins.
    pub stage_starts: Vec<usize>,
    pub num_utterances: usize,
}

/// One word model per vocabulary entry of every slot, plus an optional silence model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    pub condition: Condition,
    pub slots: Vec<Vec<WordHmm>>,
    pub silence: Option<WordHmm>,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct WordEntryJson {
    slot: usize,
    #[serde(flatten)]
    hmm: HmmParams,
}

#[derive(Serialize, Deserialize)]
struct ModelSetJson {
    schema_version: u32,
    condition: Condition,
    words: Vec<WordEntryJson>,
    silence: Option<HmmParams>,
    meta: TrainingMeta,
}

impl ModelSet {
    pub fn slot_models(&self, slot: usize) -> Vec<&WordHmm> {
        self.slots[slot].iter().collect()
    }

    /// Checks that the set has a model for every word of `grammar`, in order.
    pub fn check_complete(&self, grammar: &GrammarSpec) -> Result<()> {
        if self.slots.len() != grammar.slots.len() {
            return Err(Error::invalid("model set and grammar disagree on slot count"));
        }
        for (s, (models, slot)) in self.slots.iter().zip(&grammar.slots).enumerate() {
            if models.len() != slot.words.len() {
                return Err(Error::invalid(format!(
                    "slot {s} has {} models for {} words",
                    models.len(),
                    slot.words.len()
                )));
            }
            for (m, w) in models.iter().zip(&slot.words) {
                if m.id() != w.id {
                    return Err(Error::UnknownWord {
                        slot: s,
                        word: m.id().to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn decode(&self, obs: ArrayView2<f64>, config: &DecodeConfig) -> Result<Alignment> {
        let slots: Vec<Vec<&WordHmm>> = self.slots.iter().map(|s| s.iter().collect()).collect();
        viterbi_decode(&slots, self.silence.as_ref(), obs, config)
    }

    /// Forced alignment against a known word sequence (word indices per slot).
    pub fn force_align(&self, words: &[usize], obs: ArrayView2<f64>, config: &DecodeConfig) -> Result<Alignment> {
        let slots: Vec<Vec<&WordHmm>> = words.iter().enumerate().map(|(s, &w)| vec![&self.slots[s][w]]).collect();
        let mut a = viterbi_decode(&slots, self.silence.as_ref(), obs, config)?;
        for seg in &mut a.segments {
            if let Some(s) = seg.slot {
                seg.word = Some(words[s]);
            }
        }
        Ok(a)
    }

    pub fn to_json(&self) -> Result<String> {
        let json = ModelSetJson {
            schema_version: MODEL_SCHEMA_VERSION,
            condition: self.condition,
            words: self
                .slots
                .iter()
                .enumerate()
                .flat_map(|(slot, ms)| {
                    ms.iter().map(move |m| WordEntryJson {
                        slot,
                        hmm: m.clone().into(),
                    })
                })
                .collect(),
            silence: self.silence.clone().map(Into::into),
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string(&json)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: u32,
        }
        let v: Version = serde_json::from_str(text)?;
        if v.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: v.schema_version,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        let json: ModelSetJson = serde_json::from_str(text)?;
        let mut slots: Vec<Vec<WordHmm>> = Vec::new();
        for w in json.words {
            if w.slot >= slots.len() {
                slots.resize_with(w.slot + 1, Vec::new);
            }
            slots[w.slot].push(WordHmm::try_from(w.hmm)?);
        }
        Ok(Self {
            condition: json.condition,
            slots,
            silence: json.silence.map(WordHmm::try_from).transpose()?,
            meta: json.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
