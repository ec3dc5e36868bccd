use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SLOT_COUNT: usize = 6;

/// Default vocabulary sizes per slot: verb, color, preposition, letter, digit, adverb.
pub const DEFAULT_VOCAB_SIZES: [usize; SLOT_COUNT] = [4, 4, 4, 25, 10, 4];

const SLOT_NAMES: [&str; SLOT_COUNT] = ["verb", "color", "preposition", "letter", "digit", "adverb"];
const KEYWORD_SLOTS: [bool; SLOT_COUNT] = [false, true, false, true, true, false];

const GRID_WORDS: [&[(&str, usize)]; SLOT_COUNT] = [
    &[("bin", 3), ("lay", 2), ("place", 4), ("set", 3)],
    &[("blue", 3), ("green", 4), ("red", 3), ("white", 3)],
    &[("at", 2), ("by", 2), ("in", 2), ("with", 3)],
    &[
        ("a", 1),
        ("b", 2),
        ("c", 2),
        ("d", 2),
        ("e", 1),
        ("f", 2),
        ("g", 2),
        ("h", 2),
        ("i", 1),
        ("j", 2),
        ("k", 2),
        ("l", 2),
        ("m", 2),
        ("n", 2),
        ("o", 1),
        ("p", 2),
        ("q", 3),
        ("r", 2),
        ("s", 2),
        ("t", 2),
        ("u", 2),
        ("v", 2),
        ("x", 3),
        ("y", 2),
        ("z", 3),
    ],
    &[
        ("zero", 4),
        ("one", 3),
        ("two", 2),
        ("three", 3),
        ("four", 2),
        ("five", 3),
        ("six", 4),
        ("seven", 5),
        ("eight", 2),
        ("nine", 3),
    ],
    &[("again", 4), ("now", 2), ("please", 4), ("soon", 3)],
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordEntry {
    pub id: String,
    pub phonemes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    #[serde(default)]
    pub keyword: bool,
    pub words: Vec<WordEntry>,
}

/// Fixed six-slot matrix-sentence grammar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarSpec {
    pub slots: Vec<Slot>,
}

impl Default for GrammarSpec {
    fn default() -> Self {
        Self::grid()
    }
}

impl GrammarSpec {
    /// Verb(4)-Color(4)-Preposition(4)-Letter(25)-Digit(10)-Adverb(4).
    pub fn grid() -> Self {
        Self::with_sizes(DEFAULT_VOCAB_SIZES).expect("default grammar is valid")
    }

    /// Grammar with custom vocabulary sizes. Sizes up to the standard vocabulary
    /// take its first words; larger sizes append generated words.
    pub fn with_sizes(sizes: [usize; SLOT_COUNT]) -> Result<Self> {
        let slots = (0..SLOT_COUNT)
            .map(|s| {
                let base = GRID_WORDS[s];
                let words = (0..sizes[s])
                    .map(|i| match base.get(i) {
                        Some(&(id, ph)) => WordEntry {
                            id: id.to_string(),
                            phonemes: ph,
                        },
                        None => WordEntry {
                            id: format!("{}{}", SLOT_NAMES[s], i),
                            phonemes: 2 + i % 3,
                        },
                    })
                    .collect();
                Slot {
                    name: SLOT_NAMES[s].to_string(),
                    keyword: KEYWORD_SLOTS[s],
                    words,
                }
            })
            .collect();
        let g = Self { slots };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots.len() != SLOT_COUNT {
            return Err(Error::Grammar(format!("expected {SLOT_COUNT} slots, found {}", self.slots.len())));
        }
        for (s, slot) in self.slots.iter().enumerate() {
            if slot.words.is_empty() {
                return Err(Error::Grammar(format!("slot {s} ({}) has no words", slot.name)));
            }
            for (i, w) in slot.words.iter().enumerate() {
                if w.phonemes == 0 {
                    return Err(Error::Grammar(format!("word `{}` has zero phonemes", w.id)));
                }
                if slot.words[..i].iter().any(|o| o.id == w.id) {
                    return Err(Error::Grammar(format!("duplicate word `{}` in slot {}", w.id, slot.name)));
                }
            }
        }
        Ok(())
    }

    pub fn vocab_size(&self, slot: usize) -> usize {
        self.slots[slot].words.len()
    }

    pub fn word(&self, slot: usize, index: usize) -> &WordEntry {
        &self.slots[slot].words[index]
    }

    pub fn word_index(&self, slot: usize, id: &str) -> Result<usize> {
        self.slots
            .get(slot)
            .and_then(|s| s.words.iter().position(|w| w.id == id))
            .ok_or_else(|| Error::UnknownWord {
                slot,
                word: id.to_string(),
            })
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }

    pub fn keyword_slots(&self) -> Vec<usize> {
        (0..self.slots.len()).filter(|&s| self.slots[s].keyword).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        let g = GrammarSpec::grid();
        let sizes: Vec<usize> = (0..6).map(|s| g.vocab_size(s)).collect();
        assert_eq!(sizes, vec![4, 4, 4, 25, 10, 4]);
        assert_eq!(g.keyword_slots(), vec![1, 3, 4]);
        assert!(g.slots[3].words.iter().all(|w| w.id != "w"));
    }

    #[test]
    fn custom_sizes_extend_vocab() {
        let g = GrammarSpec::with_sizes([1, 2, 1, 30, 10, 4]).unwrap();
        assert_eq!(g.vocab_size(3), 30);
        assert_eq!(g.word(3, 27).id, "letter27");
    }

    #[test]
    fn rejects_bad_grammars() {
        let mut g = GrammarSpec::grid();
        g.slots[0].words[1].id = "bin".into();
        assert!(g.validate().is_err());
        let mut g = GrammarSpec::grid();
        g.slots[2].words[0].phonemes = 0;
        assert!(g.validate().is_err());
        let mut g = GrammarSpec::grid();
        g.slots.pop();
        assert!(g.validate().is_err());
        assert!(GrammarSpec::grid().word_index(1, "purple").is_err());
    }
}
