//! Synthetic matrix-sentence corpus: grammar, synthesis, maskers, mixing, manifests.

pub mod build;
pub mod grammar;
pub mod manifest;
pub mod mix;
pub mod noise;
pub mod synth;

pub use build::{clean_id, mix_utterance, mix_utterance_grid, synth_corpus, synth_utterance, word_choices, CorpusConfig};
pub use grammar::{GrammarSpec, Slot, WordEntry, DEFAULT_VOCAB_SIZES, SLOT_COUNT};
pub use manifest::{load_manifest, save_manifest, AlignedWord, NoiseType, Snr, UtteranceRecord};
pub use mix::{mix_at_snr, MixInfo, MixResult};
pub use noise::{compute_ltas, gen_noise, Ltas, NoiseProfile};
pub use synth::{SynthConfig, Synthesizer, WordSpan};
