pub mod asr;
pub mod audio;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod listeners;
pub mod mapping;
pub mod measures;
pub mod numeric;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
