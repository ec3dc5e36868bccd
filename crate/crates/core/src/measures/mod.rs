//! Per-keyword intelligibility measures.

pub mod extract;
pub mod scores;
pub mod snr;
pub mod stoi;

pub use extract::{extract_measures, read_measures, write_measures, AlignmentSource, MeasureConfig, MeasureRecord, UtteranceInput};
pub use scores::{dispersion, entropy, loglik_ratio, nld, score_all_models, tad, SlotScoreList, DEFAULT_DISPERSION_N};
pub use snr::{estimate_snr, separate, NoiseTracker, PowerEstimate, Separation, SnrConfig};
pub use stoi::{stoi, stoi_10k, STOI_RATE};
