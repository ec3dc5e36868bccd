use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nori::corpus::load_manifest;
use nori::listeners::{read_profiles, read_responses};
use nori::pipeline::{Pipeline, RunConfig, Stage, StageCache};
use nori::Error;

fn tiny(out: &Path) -> RunConfig {
    let mut c = RunConfig::from_toml(
        r#"
vocab_sizes = [2, 3, 2, 4, 3, 2]
snr_grid = [-10.0, -4.0, 2.0]

[corpus]
utterances = 12
"#,
    )
    .unwrap();
    c.out_dir = out.to_path_buf();
    c
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn deleted_stage_is_reproduced_byte_for_byte() {
    let d = tempfile::tempdir().unwrap();
    let p = Pipeline::with_cache(tiny(&d.path().join("out")), StageCache::at(d.path().join("cache"))).unwrap();
    let s = p.run(Stage::ListenersSim).unwrap();
    assert_eq!(s.ran, vec![Stage::CorpusSynth, Stage::CorpusMix, Stage::ListenersSim]);

    let before: Vec<_> = [Stage::CorpusMix, Stage::ListenersSim]
        .iter()
        .map(|&s| files(&p.stage_dir(s)))
        .collect();
    for st in [Stage::CorpusMix, Stage::ListenersSim] {
        fs::remove_dir_all(p.stage_dir(st)).unwrap();
    }
    let s = p.run(Stage::ListenersSim).unwrap();
    assert_eq!(s.skipped, vec![Stage::CorpusSynth]);
    let after: Vec<_> = [Stage::CorpusMix, Stage::ListenersSim]
        .iter()
        .map(|&s| files(&p.stage_dir(s)))
        .collect();
    assert_eq!(before, after);
}

#[test]
fn stage_outputs_are_consistent() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny(&d.path().join("out"));
    let p = Pipeline::with_cache(cfg.clone(), StageCache::at(d.path().join("cache"))).unwrap();
    p.run(Stage::ListenersSim).unwrap();

    let clean = load_manifest(p.stage_dir(Stage::CorpusSynth).join("manifest.jsonl")).unwrap();
    assert_eq!(clean.len(), 12);
    let noisy = load_manifest(p.stage_dir(Stage::CorpusMix).join("manifest.jsonl")).unwrap();
    assert_eq!(noisy.len(), 12 * 3);
    for r in &noisy {
        assert!(p.stage_dir(Stage::CorpusMix).join(&r.audio_path).is_file());
    }

    let profiles = read_profiles(p.stage_dir(Stage::ListenersSim).join("profiles.json")).unwrap();
    assert_eq!(profiles.len(), cfg.cohort.cohort.nhl_count);
    let responses = read_responses(p.stage_dir(Stage::ListenersSim).join("responses.csv")).unwrap();
    // every noisy token is heard once, on its keyword slots
    let keywords = cfg.grammar().unwrap().keyword_slots().len();
    assert_eq!(responses.len(), noisy.len() * keywords);
}

#[test]
fn config_change_invalidates_downstream_only() {
    let d = tempfile::tempdir().unwrap();
    let cache = StageCache::at(d.path().join("cache"));
    let a = tiny(&d.path().join("out"));
    Pipeline::with_cache(a.clone(), cache.clone())
        .unwrap()
        .run(Stage::ListenersSim)
        .unwrap();
    let mut b = a;
    b.cohort.cohort.slope = 0.7;
    let s = Pipeline::with_cache(b, cache).unwrap().run(Stage::ListenersSim).unwrap();
    assert_eq!(s.skipped, vec![Stage::CorpusSynth, Stage::CorpusMix]);
    assert_eq!(s.ran, vec![Stage::ListenersSim]);
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let err = RunConfig::from_toml("[measures]\nlist = [\"D\", \"bogus\"]\n").unwrap_err();
    match err {
        Error::Config { field, message } => {
            assert_eq!(field, "measures.list");
            assert!(message.contains("bogus"));
        }
        e => panic!("unexpected {e}"),
    }
    let mut c = RunConfig::default();
    c.snr_grid.clear();
    assert!(matches!(Pipeline::new(c), Err(Error::Config { .. })));
}

#[test]
fn partial_config_with_nested_sections() {
    let c = RunConfig::from_toml(
        r#"
noise_types = ["ssn", "white"]
snr_grid = [-14.0, -12.0, -10.0, -8.0, -6.0, -4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 40.0]

[corpus]
utterances = 600

[asr]
folds = 5

[measures]
list = ["D", "H", "L", "SNRhat", "STOI", "NORI"]
dispersion_n = 5

[cohort]
nhl_count = 20
slope = 0.5

[cohort.hil]
enabled = true

[mapping.cv]
k = 7

[seeds]
corpus = 1
"#,
    )
    .unwrap();
    assert_eq!(c.noise_types.len(), 2);
    assert!(c.cohort.hil.enabled);
    assert_eq!(c.measures.list.len(), 6);
    assert_eq!(c.seeds.noise, RunConfig::default().seeds.noise);
}
