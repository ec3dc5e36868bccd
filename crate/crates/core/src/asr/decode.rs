//! Grammar-constrained Viterbi decoding.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Item, NetModel};
use super::hmm::WordHmm;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Allow an optional silence model before, between, and after slots.
    pub silence: bool,
    /// Probability of taking each optional silence.
    pub silence_prob: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            silence: true,
            silence_prob: 0.5,
        }
    }
}

pub const SILENCE_LABEL: &str = "sil";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: String,
    /// Slot and word index for word segments, `None` for silence.
    pub slot: Option<usize>,
    pub word: Option<usize>,
    pub start: usize,
    pub end: usize,
}

/// Frame-level segmentation covering `[0, T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub segments: Vec<Segment>,
    pub log_likelihood: f64,
}

impl Alignment {
    pub fn words(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.slot.is_some())
    }

    pub fn word_in_slot(&self, slot: usize) -> Option<&Segment> {
        self.segments.iter().find(|s| s.slot == Some(slot))
    }

    pub fn num_frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    /// Contiguous, ordered, non-empty, starting at 0.
    pub fn is_contiguous(&self) -> bool {
        let mut pos = 0;
        for s in &self.segments {
            if s.start != pos || s.end <= s.start {
                return false;
            }
            pos = s.end;
        }
        true
    }
}

/// Best word per slot under the fixed slot order. `slots[n]` lists the
/// candidate models of slot `n` in vocabulary order.
pub fn viterbi_decode(
    slots: &[Vec<&WordHmm>],
    silence: Option<&WordHmm>,
    obs: ArrayView2<f64>,
    config: &DecodeConfig,
) -> Result<Alignment> {
    if slots.is_empty() || slots.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid("every slot needs at least one model"));
    }
    let mut models: Vec<&WordHmm> = Vec::new();
    let mut net_slots = Vec::with_capacity(slots.len());
    for s in slots {
        let mut v = Vec::with_capacity(s.len());
        for h in s {
            if h.dim() != obs.ncols() {
                return Err(Error::Dimension {
                    expected: h.dim(),
                    got: obs.ncols(),
                });
            }
            v.push(NetModel { hmm: h, key: models.len() });
            models.push(h);
        }
        net_slots.push(v);
    }
    let sil = match (config.silence, silence) {
        (true, Some(h)) => {
            models.push(h);
            Some(NetModel {
                hmm: h,
                key: models.len() - 1,
            })
        }
        _ => None,
    };
    let graph = Graph::network(&net_slots, sil.as_ref(), config.silence_prob);
    let e = graph.emissions(&|k| models[k], obs, false);
    let (score, path) = graph.viterbi(&e).ok_or(Error::NoAdmissiblePath)?;
    let mut segments: Vec<Segment> = Vec::new();
    let mut prev: Option<Item> = None;
    for (t, &state) in path.iter().enumerate() {
        let item = graph.item[state];
        if prev == Some(item) {
            segments.last_mut().expect("segment open").end = t + 1;
            continue;
        }
        let seg = match item {
            Item::Word { slot, alt } => Segment {
                label: slots[slot][alt].id().to_string(),
                slot: Some(slot),
                word: Some(alt),
                start: t,
                end: t + 1,
            },
            Item::Silence { .. } => Segment {
                label: SILENCE_LABEL.to_string(),
                slot: None,
                word: None,
                start: t,
                end: t + 1,
            },
        };
        segments.push(seg);
        prev = Some(item);
    }
    Ok(Alignment {
        segments,
        log_likelihood: score,
    })
}
