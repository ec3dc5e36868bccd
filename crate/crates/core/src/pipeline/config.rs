//! Run configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asr::TrainConfig as AsrTrainConfig;
use crate::corpus::{CorpusConfig, GrammarSpec, NoiseType, SynthConfig, DEFAULT_VOCAB_SIZES, SLOT_COUNT};
use crate::eval::DEFAULT_GROUP_SIZE;
use crate::features::{Calibration, FeatureConfig};
use crate::listeners::CohortConfig;
use crate::mapping::{CvPlan, TrainConfig as MlpTrainConfig};
use crate::measures::MeasureConfig;
use crate::{io, Error, Result};

/// Measures the mapping stage can be trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    D,
    H,
    L,
    Tad,
    Nld,
    SnrHat,
    Stoi,
    Nori,
}

impl Measure {
    pub const ALL: [Measure; 8] = [
        Measure::D,
        Measure::H,
        Measure::L,
        Measure::Tad,
        Measure::Nld,
        Measure::SnrHat,
        Measure::Stoi,
        Measure::Nori,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::D => "D",
            Measure::H => "H",
            Measure::L => "L",
            Measure::Tad => "TAD",
            Measure::Nld => "NLD",
            Measure::SnrHat => "SNRhat",
            Measure::Stoi => "STOI",
            Measure::Nori => "NORI",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let key = s.to_ascii_uppercase().replace(['-', '_', ' '], "");
        Self::ALL.into_iter().find(|m| m.name().to_ascii_uppercase() == key)
    }

    /// Inputs drawn from a measure record.
    pub fn inputs(self, r: &crate::measures::MeasureRecord) -> Vec<f64> {
        match self {
            Measure::D => vec![r.d],
            Measure::H => vec![r.h],
            Measure::L => vec![r.l],
            Measure::Tad => vec![r.tad],
            Measure::Nld => vec![r.nld],
            Measure::SnrHat => vec![r.snr_hat],
            Measure::Stoi => vec![r.stoi],
            Measure::Nori => vec![r.d, r.snr_hat],
        }
    }
}

impl Serialize for Measure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Measure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Measure::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown measure `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub corpus: u64,
    pub noise: u64,
    pub asr: u64,
    pub listeners: u64,
    pub mapping: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            corpus: 1,
            noise: 2,
            asr: 3,
            listeners: 4,
            mapping: 5,
        }
    }
}

impl Seeds {
    /// One seed for every stage, offset so the stages draw separate streams.
    pub fn all(seed: u64) -> Self {
        Self {
            corpus: seed,
            noise: seed.wrapping_add(1),
            asr: seed.wrapping_add(2),
            listeners: seed.wrapping_add(3),
            mapping: seed.wrapping_add(4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsrSection {
    pub folds: usize,
    pub train: AsrTrainConfig,
}

impl Default for AsrSection {
    fn default() -> Self {
        Self {
            folds: 5,
            train: AsrTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasuresSection {
    pub list: Vec<Measure>,
    /// Also evaluate D on keyword segments from the reference alignment.
    pub reference_alignment: bool,
    #[serde(flatten)]
    pub config: MeasureConfig,
}

impl Default for MeasuresSection {
    fn default() -> Self {
        Self {
            list: vec![Measure::D, Measure::H, Measure::L, Measure::SnrHat, Measure::Stoi, Measure::Nori],
            reference_alignment: true,
            config: MeasureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HilSection {
    pub enabled: bool,
    /// Clean utterances (the first ones of the corpus) used per listener.
    pub utterances: usize,
    pub snr_grid: Vec<f64>,
    pub calibration: Calibration,
}

impl Default for HilSection {
    fn default() -> Self {
        Self {
            enabled: false,
            utterances: 200,
            snr_grid: vec![-12.0, -10.0, -8.0, -6.0, -4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 40.0],
            calibration: Calibration::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSection {
    #[serde(flatten)]
    pub cohort: CohortConfig,
    pub hil: HilSection,
}

impl Default for CohortSection {
    fn default() -> Self {
        Self {
            cohort: CohortConfig::default(),
            hil: HilSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingSection {
    pub cv: CvPlan,
    pub train: MlpTrainConfig,
    /// Files per macroscopic group.
    pub group_size: usize,
}

impl Default for MappingSection {
    fn default() -> Self {
        Self {
            cv: CvPlan::default(),
            train: MlpTrainConfig::default(),
            group_size: DEFAULT_GROUP_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Worker threads (0 = all cores); never changes results.
    pub jobs: usize,
    pub vocab_sizes: [usize; SLOT_COUNT],
    pub corpus: CorpusConfig,
    pub synth: SynthConfig,
    pub noise_types: Vec<NoiseType>,
    pub snr_grid: Vec<f64>,
    pub features: FeatureConfig,
    pub asr: AsrSection,
    pub measures: MeasuresSection,
    pub cohort: CohortSection,
    pub mapping: MappingSection,
    pub seeds: Seeds,
}

pub fn default_snr_grid() -> Vec<f64> {
    let mut g: Vec<f64> = (-14..=6).step_by(2).map(f64::from).collect();
    g.push(40.0);
    g
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("nori-out"),
            jobs: 0,
            vocab_sizes: DEFAULT_VOCAB_SIZES,
            corpus: CorpusConfig::default(),
            synth: SynthConfig::default(),
            noise_types: vec![NoiseType::Ssn],
            snr_grid: default_snr_grid(),
            features: FeatureConfig::default(),
            asr: AsrSection::default(),
            measures: MeasuresSection::default(),
            cohort: CohortSection::default(),
            mapping: MappingSection::default(),
            seeds: Seeds::default(),
        }
    }
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

/// Maps TOML deserialization failures onto the offending field.
fn toml_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    let field = if msg.contains("unknown measure `") {
        "measures.list".to_string()
    } else if let Some(rest) = msg.split("unknown field `").nth(1) {
        rest.split('`').next().unwrap_or("?").to_string()
    } else {
        "config".to_string()
    };
    config_err(&field, msg.trim())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(toml_error)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_text(path).map_err(|e| config_err("--config", e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn grammar(&self) -> Result<GrammarSpec> {
        GrammarSpec::with_sizes(self.vocab_sizes).map_err(|e| config_err("vocab_sizes", e.to_string()))
    }

    /// Every SNR that has to be mixed: the main grid plus the HIL grid.
    pub fn all_snrs(&self) -> Vec<f64> {
        let mut v = self.snr_grid.clone();
        if self.cohort.hil.enabled {
            v.extend(&self.cohort.hil.snr_grid);
        }
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub fn validate(&self) -> Result<()> {
        self.grammar()?;
        if self.corpus.utterances == 0 {
            return Err(config_err("corpus.utterances", "must be positive"));
        }
        if self.corpus.speakers == 0 {
            return Err(config_err("corpus.speakers", "must be positive"));
        }
        if self.noise_types.is_empty() || self.noise_types.contains(&NoiseType::None) {
            return Err(config_err("noise_types", "need at least one of white, ssn, babble"));
        }
        for (field, grid) in [("snr_grid", &self.snr_grid), ("cohort.hil.snr_grid", &self.cohort.hil.snr_grid)] {
            if grid.is_empty() || grid.iter().any(|s| !s.is_finite()) {
                return Err(config_err(field, "must be a non-empty list of finite values"));
            }
        }
        self.features.validate().map_err(|e| config_err("features", e.to_string()))?;
        if self.asr.folds < 2 {
            return Err(config_err("asr.folds", "need at least 2 folds"));
        }
        if self.corpus.utterances < self.asr.folds {
            return Err(config_err("corpus.utterances", "fewer utterances than ASR folds"));
        }
        if self.measures.list.is_empty() {
            return Err(config_err("measures.list", "no measures selected"));
        }
        if self.measures.config.dispersion_n < 2 {
            return Err(config_err("measures.dispersion_n", "must be at least 2"));
        }
        self.measures.config.snr.validate()?;
        self.cohort.cohort.validate()?;
        if self.cohort.cohort.nhl_count == 0 {
            return Err(config_err("cohort.nhl_count", "must be positive"));
        }
        for n in &self.noise_types {
            if !self.cohort.cohort.anchors.contains_key(n.as_str()) {
                return Err(config_err("cohort.anchors", format!("no SRT anchor for noise type `{n}`")));
            }
        }
        if self.cohort.hil.enabled {
            if self.cohort.cohort.hil_count == 0 {
                return Err(config_err("cohort.hil_count", "must be positive when HIL is enabled"));
            }
            let n = self.cohort.hil.utterances;
            if n < self.asr.folds || n > self.corpus.utterances {
                return Err(config_err(
                    "cohort.hil.utterances",
                    "must lie between the ASR fold count and the corpus size",
                ));
            }
        }
        self.mapping.cv.validate()?;
        if self.mapping.group_size == 0 {
            return Err(config_err("mapping.group_size", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(c.snr_grid.len(), 12);
        assert_eq!(c.measures.config.dispersion_n, 5);
        assert_eq!((c.asr.folds, c.mapping.cv.k), (5, 7));
    }

    #[test]
    fn partial_config() {
        let c = RunConfig::from_toml("[corpus]\nutterances = 40\n[measures]\nlist = [\"NORI\", \"snr-hat\"]\n").unwrap();
        assert_eq!(c.corpus.utterances, 40);
        assert_eq!(c.measures.list, vec![Measure::Nori, Measure::SnrHat]);
        assert_eq!(c.corpus.speakers, 4);
    }

    #[test]
    fn unknown_measure_names_field() {
        match RunConfig::from_toml("[measures]\nlist = [\"D\", \"PESQ\"]\n") {
            Err(Error::Config { field, message }) => {
                assert_eq!(field, "measures.list");
                assert!(message.contains("PESQ"));
            }
            other => panic!("{other:?}"),
        }
        match RunConfig::from_toml("bogus = 1\n") {
            Err(Error::Config { field, .. }) => assert_eq!(field, "bogus"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(RunConfig::from_toml("snr_grid = []\n"), Err(Error::Config { .. })));
    }
}
