//! Word-level GMM-HMM recognizer.

pub mod decode;
pub mod gmm;
mod graph;
pub mod hmm;
pub mod models;
pub mod split;
pub mod train;

pub use decode::{viterbi_decode, Alignment, DecodeConfig, Segment};
pub use gmm::DiagGmm;
pub use hmm::{forward_log_likelihood, viterbi_log_likelihood, WordHmm};
pub use models::{Condition, ModelSet, TrainingMeta, MODEL_SCHEMA_VERSION};
pub use split::{kfold_split, FoldSplit};
pub use train::{samples_to_frames, train_models, TrainConfig, TrainUtterance};
