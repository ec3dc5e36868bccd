//! End-to-end experiment: corpus, recognisers, measures, listeners,
//! mappings and the report, each stage cached by the hash of its inputs.

mod cache;
mod config;
mod stages;

use std::fmt;
use std::path::{Path, PathBuf};

use serde_json::Value;

pub use cache::{content_key, StageCache, CACHE_ENV};
pub use config::{AsrSection, CohortSection, HilSection, MappingSection, Measure, MeasuresSection, RunConfig, Seeds};
pub use stages::{config_echo, MacroPredictionRow, PredictionRow, NHL};

use crate::{Error, Result};
use cache::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    CorpusSynth,
    CorpusMix,
    AsrTrain,
    MeasuresExtract,
    ListenersSim,
    MapTrain,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::CorpusSynth,
        Stage::CorpusMix,
        Stage::AsrTrain,
        Stage::MeasuresExtract,
        Stage::ListenersSim,
        Stage::MapTrain,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::CorpusSynth => "corpus-synth",
            Stage::CorpusMix => "corpus-mix",
            Stage::AsrTrain => "asr-train",
            Stage::MeasuresExtract => "measures-extract",
            Stage::ListenersSim => "listeners-sim",
            Stage::MapTrain => "map-train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| Error::Config {
            field: "stage".into(),
            message: format!("unknown stage `{s}`"),
        })
    }

    /// Stages this one reads from.
    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::CorpusSynth => &[],
            Stage::CorpusMix => &[Stage::CorpusSynth],
            Stage::AsrTrain => &[Stage::CorpusSynth, Stage::CorpusMix],
            Stage::MeasuresExtract => &[Stage::CorpusSynth, Stage::CorpusMix, Stage::AsrTrain],
            Stage::ListenersSim => &[Stage::CorpusMix],
            Stage::MapTrain => &[Stage::CorpusMix, Stage::MeasuresExtract, Stage::ListenersSim],
            Stage::Evaluate => &[Stage::CorpusMix, Stage::ListenersSim, Stage::MapTrain],
            Stage::Report => &[Stage::Evaluate],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub ran: Vec<Stage>,
    pub skipped: Vec<Stage>,
}

pub struct Pipeline {
    config: RunConfig,
    cache: StageCache,
    out_dir: PathBuf,
    keys: Vec<(Stage, String)>,
}

impl Pipeline {
    /// Validates the config and derives every stage key. The cache lives
    /// under `$NORI_CACHE_DIR` if set, else `<out_dir>/cache`.
    pub fn new(config: RunConfig) -> Result<Self> {
        let out_dir = PathBuf::from(&config.out_dir);
        let cache = StageCache::new(&out_dir);
        Self::with_cache(config, cache)
    }

    pub fn with_cache(config: RunConfig, cache: StageCache) -> Result<Self> {
        config.validate()?;
        let out_dir = PathBuf::from(&config.out_dir);
        let keys = stage_keys(&config);
        Ok(Self {
            config,
            cache,
            out_dir,
            keys,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn key(&self, stage: Stage) -> &str {
        &self.keys.iter().find(|k| k.0 == stage).expect("every stage has a key").1
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.cache.dir(stage.name(), self.key(stage))
    }

    /// Directory the report bundle is published to.
    pub fn report_dir(&self) -> PathBuf {
        self.out_dir.join("report")
    }

    /// Runs `target` and whatever it depends on; finished stages with an
    /// unchanged key are skipped.
    pub fn run(&self, target: Stage) -> Result<RunSummary> {
        let mut order = Vec::new();
        collect(target, &mut order);
        order.sort();
        let mut summary = RunSummary::default();
        for stage in order {
            let ran = self
                .cache
                .run(stage.name(), self.key(stage), |dir| {
                    log::info!("{stage}: running");
                    self.execute(stage, dir)
                })
                .map_err(|e| e.in_stage(stage.name()))?;
            if ran {
                summary.ran.push(stage);
            } else {
                log::info!("{stage}: up to date");
                summary.skipped.push(stage);
            }
        }
        if target == Stage::Report {
            stages::publish(&self.stage_dir(Stage::Report), &self.report_dir()).map_err(|e| e.in_stage("report"))?;
        }
        Ok(summary)
    }

    pub fn run_all(&self) -> Result<RunSummary> {
        self.run(Stage::Report)
    }

    fn execute(&self, stage: Stage, dir: &Path) -> Result<()> {
        let cfg = &self.config;
        let grammar = cfg.grammar()?;
        let d = |s: Stage| self.stage_dir(s);
        match stage {
            Stage::CorpusSynth => stages::corpus_synth(cfg, &grammar, dir),
            Stage::CorpusMix => stages::corpus_mix(cfg, &grammar, &d(Stage::CorpusSynth), dir),
            Stage::AsrTrain => stages::asr_train(cfg, &grammar, &d(Stage::CorpusSynth), &d(Stage::CorpusMix), dir),
            Stage::MeasuresExtract => stages::measures_extract(
                cfg,
                &grammar,
                &d(Stage::CorpusSynth),
                &d(Stage::CorpusMix),
                &d(Stage::AsrTrain),
                dir,
            ),
            Stage::ListenersSim => stages::listeners_sim(cfg, &grammar, &d(Stage::CorpusMix), dir),
            Stage::MapTrain => stages::map_train(cfg, &d(Stage::CorpusMix), &d(Stage::MeasuresExtract), &d(Stage::ListenersSim), dir),
            Stage::Evaluate => stages::evaluate(cfg, &d(Stage::CorpusMix), &d(Stage::ListenersSim), &d(Stage::MapTrain), dir),
            Stage::Report => stages::report(&d(Stage::Evaluate), dir),
        }
    }
}

/// Sizes the global worker pool (0 = one per core). Has no effect once
/// the pool exists; results never depend on the thread count.
pub fn init_threads(jobs: usize) -> bool {
    jobs > 0 && rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().is_ok()
}

fn collect(stage: Stage, out: &mut Vec<Stage>) {
    if out.contains(&stage) {
        return;
    }
    out.push(stage);
    for &d in stage.deps() {
        collect(d, out);
    }
}

fn stage_keys(c: &RunConfig) -> Vec<(Stage, String)> {
    let key = |s: Stage, parts: Vec<Value>| content_key(s.name(), &parts);
    let hil = if c.cohort.hil.enabled { json(&c.cohort) } else { Value::Null };
    let synth = key(
        Stage::CorpusSynth,
        vec![json(&c.vocab_sizes), json(&c.corpus), json(&c.synth), json(&c.seeds.corpus)],
    );
    let mix = key(
        Stage::CorpusMix,
        vec![json(&synth), json(&c.noise_types), json(&c.all_snrs()), json(&c.seeds.noise)],
    );
    let asr = key(
        Stage::AsrTrain,
        vec![
            json(&mix),
            json(&c.snr_grid),
            json(&c.features),
            json(&c.asr),
            json(&c.seeds.asr),
            hil.clone(),
            json(&c.seeds.listeners),
        ],
    );
    let measures = key(
        Stage::MeasuresExtract,
        vec![json(&asr), json(&c.measures.config), json(&c.measures.reference_alignment)],
    );
    let listeners = key(
        Stage::ListenersSim,
        vec![json(&mix), json(&c.snr_grid), json(&c.cohort), json(&c.seeds.listeners)],
    );
    let mapping = key(
        Stage::MapTrain,
        vec![
            json(&measures),
            json(&listeners),
            json(&c.measures.list),
            json(&c.measures.reference_alignment),
            json(&c.mapping),
            json(&c.seeds.mapping),
        ],
    );
    let evaluate = key(Stage::Evaluate, vec![json(&mapping), config_echo(c)]);
    let report = key(Stage::Report, vec![json(&evaluate)]);
    vec![
        (Stage::CorpusSynth, synth),
        (Stage::CorpusMix, mix),
        (Stage::AsrTrain, asr),
        (Stage::MeasuresExtract, measures),
        (Stage::ListenersSim, listeners),
        (Stage::MapTrain, mapping),
        (Stage::Evaluate, evaluate),
        (Stage::Report, report),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(Stage::parse(s.name()).unwrap(), s);
        }
        assert!(matches!(Stage::parse("nope"), Err(Error::Config { .. })));
    }

    #[test]
    fn keys_change_only_downstream() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.mapping.group_size = 5;
        let (ka, kb) = (stage_keys(&a), stage_keys(&b));
        for ((s, x), (_, y)) in ka.iter().zip(&kb) {
            let downstream = *s >= Stage::MapTrain;
            assert_eq!(x != y, downstream, "{s}");
        }
    }

    #[test]
    fn echo_omits_run_location() {
        let c = RunConfig {
            jobs: 3,
            ..RunConfig::default()
        };
        let v = config_echo(&c);
        assert!(v.get("out_dir").is_none() && v.get("jobs").is_none());
        assert_eq!(v["snr_grid"].as_array().unwrap().len(), c.snr_grid.len());
        // thread count and output location never change a stage key
        let mut d = c.clone();
        d.jobs = 1;
        d.out_dir = "elsewhere".into();
        assert_eq!(stage_keys(&c), stage_keys(&d));
    }

    #[test]
    fn dependencies_precede() {
        for s in Stage::ALL {
            for d in s.deps() {
                assert!(d < &s);
            }
        }
    }
}
