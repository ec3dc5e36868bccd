//! Stage implementations. Each reads upstream stage directories and writes
//! its own; nothing depends on wall-clock time or thread scheduling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Measure, RunConfig};
use crate::asr::{kfold_split, samples_to_frames, train_models, Condition, FoldSplit, ModelSet, TrainUtterance};
use crate::audio::Waveform;
use crate::corpus::{
    compute_ltas, load_manifest, mix_utterance_grid, save_manifest, synth_corpus, GrammarSpec, Ltas, NoiseProfile, NoiseType, Snr,
    Synthesizer, UtteranceRecord,
};
use crate::eval::{
    fishers_exact, fit_straddling, kendall_tau, macro_average, ncc, rmse, AccuracyRow, KeywordObs, MacroRow, Metrics, SignificanceRow,
    SrtRow,
};
use crate::features::{extract_features, Calibration, FeatureConfig, MelFilterbank};
use crate::io;
use crate::listeners::{
    make_cohort, read_profiles, simulate_responses, write_profiles, write_responses, ListenerProfile, ListenerType, Response,
};
use crate::mapping::{fit, run_cv, write_cv_rows, CvRow, Dataset, MeanCi, Output};
use crate::measures::{extract_measures, read_measures, write_measures, AlignmentSource, MeasureRecord, UtteranceInput};
use crate::{Error, Result};

/// Listener group of the normal-hearing cohort.
pub const NHL: &str = "NHL";
const MANIFEST: &str = "manifest.jsonl";

fn snr_key(s: f64) -> String {
    Snr::Db(s).label()
}

fn read_wave(dir: &Path, rec: &UtteranceRecord) -> Result<Waveform> {
    Waveform::read_wav(dir.join(&rec.audio_path))
}

// corpus-synth

pub fn corpus_synth(cfg: &RunConfig, grammar: &GrammarSpec, dir: &Path) -> Result<()> {
    let synth = Synthesizer::new(grammar.clone(), cfg.synth.clone())?;
    let corpus = synth_corpus(&synth, &cfg.corpus, cfg.seeds.corpus);
    corpus
        .par_iter()
        .try_for_each(|(rec, wave)| wave.write_wav(dir.join(&rec.audio_path)))?;
    let waves: Vec<Waveform> = corpus.iter().map(|c| c.1.quantized()).collect();
    let ltas = compute_ltas(&waves, crate::corpus::noise::DEFAULT_LTAS_FFT)?;
    io::write_json(&dir.join("ltas.json"), &ltas)?;
    let recs: Vec<UtteranceRecord> = corpus.into_iter().map(|c| c.0).collect();
    save_manifest(dir.join(MANIFEST), &recs)
}

// corpus-mix

fn profile(noise: NoiseType, ltas: &Ltas, grammar: &GrammarSpec, cfg: &RunConfig) -> Result<NoiseProfile> {
    Ok(match noise {
        NoiseType::White => NoiseProfile::White,
        NoiseType::Ssn => NoiseProfile::Ssn { ltas: ltas.clone() },
        NoiseType::Babble => NoiseProfile::babble(grammar.clone(), cfg.synth.clone()),
        NoiseType::None => return Err(Error::invalid("noise type `none` cannot be mixed")),
    })
}

pub fn corpus_mix(cfg: &RunConfig, grammar: &GrammarSpec, synth_dir: &Path, dir: &Path) -> Result<()> {
    let clean = load_manifest(synth_dir.join(MANIFEST))?;
    let ltas: Ltas = io::read_json(&synth_dir.join("ltas.json"))?;
    let snrs = cfg.all_snrs();
    let profiles = cfg
        .noise_types
        .iter()
        .map(|&n| Ok((n, profile(n, &ltas, grammar, cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    let per_clean: Vec<Vec<UtteranceRecord>> = clean
        .par_iter()
        .map(|c| {
            let wave = read_wave(synth_dir, c)?;
            let mut out = Vec::new();
            for (noise, p) in &profiles {
                for (rec, w) in mix_utterance_grid(c, &wave, p, *noise, &snrs, cfg.seeds.noise)? {
                    w.write_wav(dir.join(&rec.audio_path))?;
                    out.push(rec);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut recs: Vec<UtteranceRecord> = per_clean.into_iter().flatten().collect();
    recs.sort_by(|a, b| {
        a.noise_type
            .cmp(&b.noise_type)
            .then(
                a.snr_db
                    .db()
                    .unwrap_or(f64::INFINITY)
                    .total_cmp(&b.snr_db.db().unwrap_or(f64::INFINITY)),
            )
            .then(a.id.cmp(&b.id))
    });
    save_manifest(dir.join(MANIFEST), &recs)
}

// shared by asr-train and measures-extract

/// A set of listeners sharing one front end: the normal-hearing cohort
/// (plain features, full corpus) or one hearing-impaired listener.
struct Group {
    name: String,
    floors: Option<Vec<f64>>,
    /// Clean utterance ids in corpus order.
    clean_ids: Vec<String>,
    snrs: Vec<f64>,
}

fn hil_profiles(cfg: &RunConfig, grammar: &GrammarSpec) -> Result<Vec<ListenerProfile>> {
    make_cohort(
        cfg.cohort.cohort.hil_count,
        ListenerType::Hil,
        cfg.seeds.listeners,
        grammar,
        &cfg.cohort.cohort,
    )
}

fn groups(cfg: &RunConfig, grammar: &GrammarSpec, clean: &[UtteranceRecord]) -> Result<Vec<Group>> {
    let mut out = vec![Group {
        name: NHL.into(),
        floors: None,
        clean_ids: clean.iter().map(|r| r.id.clone()).collect(),
        snrs: cfg.snr_grid.clone(),
    }];
    if cfg.cohort.hil.enabled {
        let centers = MelFilterbank::new(&cfg.features).centers_hz().to_vec();
        let cal: &Calibration = &cfg.cohort.hil.calibration;
        for p in hil_profiles(cfg, grammar)? {
            let a = p.audiogram.as_ref().expect("hearing-impaired profiles carry audiograms");
            out.push(Group {
                name: p.id.clone(),
                floors: Some(cal.band_floors(a, &centers)),
                clean_ids: clean.iter().take(cfg.cohort.hil.utterances).map(|r| r.id.clone()).collect(),
                snrs: cfg.cohort.hil.snr_grid.clone(),
            });
        }
    }
    Ok(out)
}

/// Noisy records of one condition, in the order of `clean_ids`.
fn condition_records<'a>(
    noisy: &'a [UtteranceRecord],
    clean_ids: &[String],
    noise: NoiseType,
    snr: f64,
) -> Result<Vec<&'a UtteranceRecord>> {
    let by: HashMap<&str, &UtteranceRecord> = noisy
        .iter()
        .filter(|r| r.noise_type == noise && r.snr_db == Snr::Db(snr))
        .map(|r| (r.mix.as_ref().map_or(r.id.as_str(), |m| m.clean_id.as_str()), r))
        .collect();
    clean_ids
        .iter()
        .map(|id| {
            by.get(id.as_str())
                .copied()
                .ok_or_else(|| Error::invalid(format!("no {noise} mixture at {snr} dB for {id}")))
        })
        .collect()
}

fn features_of(cfg: &FeatureConfig, rec: &UtteranceRecord, wave: &Waveform, floors: Option<&[f64]>) -> Result<Array2<f64>> {
    Ok(extract_features(wave, cfg, floors, &rec.id)?.frames)
}

fn model_path(dir: &Path, group: &str, cond: &Condition, fold: usize) -> PathBuf {
    dir.join(group).join(cond.key()).join(format!("fold{fold}.json"))
}

// asr-train

pub fn asr_train(cfg: &RunConfig, grammar: &GrammarSpec, synth_dir: &Path, mix_dir: &Path, dir: &Path) -> Result<()> {
    let clean = load_manifest(synth_dir.join(MANIFEST))?;
    let noisy = load_manifest(mix_dir.join(MANIFEST))?;
    for g in groups(cfg, grammar, &clean)? {
        let split = kfold_split(g.clean_ids.len(), cfg.asr.folds, cfg.seeds.asr)?;
        io::write_json(&dir.join(&g.name).join("split.json"), &split)?;
        for &noise in &cfg.noise_types {
            for &snr in &g.snrs {
                let recs = condition_records(&noisy, &g.clean_ids, noise, snr)?;
                let feats: Vec<Array2<f64>> = recs
                    .par_iter()
                    .map(|r| features_of(&cfg.features, r, &read_wave(mix_dir, r)?, g.floors.as_deref()))
                    .collect::<Result<_>>()?;
                let utts: Vec<TrainUtterance> = recs
                    .iter()
                    .zip(&feats)
                    .map(|(r, f)| {
                        Ok(TrainUtterance {
                            frames: f.view(),
                            words: r
                                .words
                                .iter()
                                .enumerate()
                                .map(|(s, w)| grammar.word_index(s, w))
                                .collect::<Result<_>>()?,
                            spans: r
                                .alignment
                                .iter()
                                .map(|a| samples_to_frames(a.start, a.end, cfg.features.frame_len(), cfg.features.frame_shift(), f.nrows()))
                                .collect(),
                        })
                    })
                    .collect::<Result<_>>()?;
                let cond = Condition { noise, snr: Snr::Db(snr) };
                for fold in &split {
                    let train: Vec<TrainUtterance> = fold.train.iter().map(|&i| utts[i].clone()).collect();
                    let models = train_models(grammar, &train, cond, fold.fold, &cfg.asr.train)?;
                    models.save(model_path(dir, &g.name, &cond, fold.fold))?;
                    log::info!("asr-train: {} {} fold {} done", g.name, cond.key(), fold.fold);
                }
            }
        }
    }
    Ok(())
}

// measures-extract

pub fn measures_extract(
    cfg: &RunConfig,
    grammar: &GrammarSpec,
    synth_dir: &Path,
    mix_dir: &Path,
    asr_dir: &Path,
    dir: &Path,
) -> Result<()> {
    let clean = load_manifest(synth_dir.join(MANIFEST))?;
    let clean_by: HashMap<&str, &UtteranceRecord> = clean.iter().map(|r| (r.id.as_str(), r)).collect();
    let noisy = load_manifest(mix_dir.join(MANIFEST))?;
    let mut sources = vec![AlignmentSource::Recognized];
    if cfg.measures.reference_alignment {
        sources.push(AlignmentSource::Reference);
    }
    for g in groups(cfg, grammar, &clean)? {
        let split: Vec<FoldSplit> = io::read_json(&asr_dir.join(&g.name).join("split.json"))?;
        let mut test_fold = vec![0; g.clean_ids.len()];
        for f in &split {
            for &i in &f.test {
                test_fold[i] = f.fold;
            }
        }
        let mut all = Vec::new();
        for &noise in &cfg.noise_types {
            for &snr in &g.snrs {
                let cond = Condition { noise, snr: Snr::Db(snr) };
                let models: Vec<ModelSet> = split
                    .iter()
                    .map(|f| ModelSet::load(model_path(asr_dir, &g.name, &cond, f.fold)))
                    .collect::<Result<_>>()?;
                let recs = condition_records(&noisy, &g.clean_ids, noise, snr)?;
                let rows: Vec<Vec<MeasureRecord>> = recs
                    .par_iter()
                    .enumerate()
                    .map(|(i, r)| {
                        let noisy_wave = read_wave(mix_dir, r)?;
                        let clean_rec = clean_by[g.clean_ids[i].as_str()];
                        let clean_wave = read_wave(synth_dir, clean_rec)?;
                        let feats = features_of(&cfg.features, r, &noisy_wave, g.floors.as_deref())?;
                        let input = UtteranceInput {
                            record: r,
                            features: feats.view(),
                            noisy: &noisy_wave,
                            clean: &clean_wave,
                        };
                        extract_measures(
                            &input,
                            grammar,
                            &models[test_fold[i]],
                            &cfg.features,
                            &sources,
                            &cfg.measures.config,
                        )
                    })
                    .collect::<Result<_>>()?;
                all.extend(rows.into_iter().flatten());
                log::info!("measures-extract: {} {} done", g.name, cond.key());
            }
        }
        write_measures(dir.join(format!("{}.csv", g.name)), &all)?;
    }
    Ok(())
}

// listeners-sim

pub fn listeners_sim(cfg: &RunConfig, grammar: &GrammarSpec, mix_dir: &Path, dir: &Path) -> Result<()> {
    let noisy = load_manifest(mix_dir.join(MANIFEST))?;
    let nhl = make_cohort(
        cfg.cohort.cohort.nhl_count,
        ListenerType::Nhl,
        cfg.seeds.listeners,
        grammar,
        &cfg.cohort.cohort,
    )?;
    let main: Vec<UtteranceRecord> = noisy
        .iter()
        .filter(|r| r.snr_db.db().is_some_and(|s| cfg.snr_grid.contains(&s)))
        .cloned()
        .collect();
    let mut responses = simulate_responses(&nhl, &main, grammar, true, cfg.seeds.listeners)?;
    let mut profiles = nhl;
    if cfg.cohort.hil.enabled {
        let hil = hil_profiles(cfg, grammar)?;
        let subset: BTreeSet<String> = (0..cfg.cohort.hil.utterances).map(crate::corpus::clean_id).collect();
        let recs: Vec<UtteranceRecord> = noisy
            .iter()
            .filter(|r| {
                r.snr_db.db().is_some_and(|s| cfg.cohort.hil.snr_grid.contains(&s))
                    && r.mix.as_ref().is_some_and(|m| subset.contains(&m.clean_id))
            })
            .cloned()
            .collect();
        responses.extend(simulate_responses(&hil, &recs, grammar, false, cfg.seeds.listeners)?);
        profiles.extend(hil);
    }
    write_profiles(dir.join("profiles.json"), &profiles)?;
    write_responses(dir.join("responses.csv"), &responses)
}

// map-train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub listener: String,
    pub condition: String,
    pub measure: String,
    pub fold: usize,
    pub utt_id: String,
    pub slot: usize,
    pub snr: f64,
    pub prob: f64,
    pub predicted: bool,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroPredictionRow {
    pub listener: String,
    pub condition: String,
    pub measure: String,
    pub fold: usize,
    pub group: String,
    pub snr: f64,
    pub wcs: f64,
    pub predicted: f64,
}

/// One mapping task: a measure (or D on reference segments) for one
/// listener group and noise type.
struct Task<'a> {
    listener: String,
    noise: NoiseType,
    name: String,
    records: Vec<(&'a MeasureRecord, f64, bool)>,
    inputs: Vec<Vec<f64>>,
}

impl Task<'_> {
    fn condition(&self) -> String {
        if self.listener == NHL {
            self.noise.to_string()
        } else {
            format!("{}:{}", self.noise, self.listener)
        }
    }
}

fn accuracy_of(pred: &[bool], label: &[bool]) -> f64 {
    crate::eval::accuracy(pred, label).unwrap_or(f64::NAN)
}

pub fn map_train(cfg: &RunConfig, mix_dir: &Path, measures_dir: &Path, listeners_dir: &Path, dir: &Path) -> Result<()> {
    let noisy = load_manifest(mix_dir.join(MANIFEST))?;
    let info: HashMap<&str, (NoiseType, f64)> = noisy
        .iter()
        .filter_map(|r| r.snr_db.db().map(|s| (r.id.as_str(), (r.noise_type, s))))
        .collect();
    let profiles = read_profiles(listeners_dir.join("profiles.json"))?;
    let kind: HashMap<&str, ListenerType> = profiles.iter().map(|p| (p.id.as_str(), p.kind)).collect();
    let responses: Vec<Response> = io::read_csv(&listeners_dir.join("responses.csv"))?;
    let mut labels: HashMap<(String, String, usize), bool> = HashMap::new();
    for r in responses {
        let group = match kind.get(r.listener_id.as_str()) {
            Some(ListenerType::Hil) => r.listener_id.clone(),
            _ => NHL.to_string(),
        };
        labels.insert((group, r.utt_id, r.slot), r.correct);
    }

    let mut group_names = vec![NHL.to_string()];
    if cfg.cohort.hil.enabled {
        group_names.extend(profiles.iter().filter(|p| p.kind == ListenerType::Hil).map(|p| p.id.clone()));
    }
    let mut cv_rows = Vec::new();
    let mut predictions = Vec::new();
    let mut macro_predictions = Vec::new();
    for group in &group_names {
        let records = read_measures(measures_dir.join(format!("{group}.csv")))?;
        for &noise in &cfg.noise_types {
            let mut variants: Vec<(String, AlignmentSource, Measure)> = cfg
                .measures
                .list
                .iter()
                .map(|&m| (m.name().to_string(), AlignmentSource::Recognized, m))
                .collect();
            if cfg.measures.reference_alignment {
                variants.push(("D_ref".into(), AlignmentSource::Reference, Measure::D));
            }
            for (name, source, measure) in variants {
                let recs: Vec<(&MeasureRecord, f64, bool)> = records
                    .iter()
                    .filter(|r| r.alignment_source == source)
                    .filter_map(|r| {
                        let (n, snr) = *info.get(r.utt_id.as_str())?;
                        let label = *labels.get(&(group.clone(), r.utt_id.clone(), r.slot))?;
                        (n == noise).then_some((r, snr, label))
                    })
                    .collect();
                let task = Task {
                    listener: group.clone(),
                    noise,
                    name,
                    inputs: recs.iter().map(|(r, _, _)| measure.inputs(r)).collect(),
                    records: recs,
                };
                micro(cfg, &task, dir, &mut cv_rows, &mut predictions)?;
                macro_cv(cfg, &task, &mut cv_rows, &mut macro_predictions)?;
                log::info!("map-train: {} {} {} done", task.listener, task.noise, task.name);
            }
        }
    }
    write_cv_rows(dir.join("cv.csv"), &cv_rows)?;
    io::write_csv(&dir.join("predictions.csv"), &predictions)?;
    io::write_csv(&dir.join("macro_predictions.csv"), &macro_predictions)
}

fn micro(cfg: &RunConfig, task: &Task<'_>, dir: &Path, cv_rows: &mut Vec<CvRow>, out: &mut Vec<PredictionRow>) -> Result<()> {
    let n = task.records.len();
    let y: Vec<f64> = task.records.iter().map(|r| f64::from(u8::from(r.2))).collect();
    let data = Dataset::from_rows(&task.inputs, &y)?;
    let plan = crate::mapping::CvPlan {
        seed: cfg.seeds.mapping,
        ..cfg.mapping.cv.clone()
    };
    let condition = task.condition();
    let collected: Mutex<BTreeMap<usize, Vec<PredictionRow>>> = Mutex::new(BTreeMap::new());
    let result = run_cv(n, &plan, |fold| {
        let (model, _) = crate::mapping::fit_classifier(
            &data.select(&fold.train),
            &data.select(&fold.valid),
            &cfg.mapping.train,
            cfg.seeds.mapping ^ fold.index as u64,
        )?;
        model.save(
            dir.join("models")
                .join(&task.listener)
                .join(task.noise.as_str())
                .join(format!("{}_fold{}.json", task.name, fold.index)),
        )?;
        let test = data.select(&fold.test);
        let probs = model.predict(test.x.view())?;
        let rows: Vec<PredictionRow> = fold
            .test
            .iter()
            .zip(probs.iter())
            .map(|(&i, &p)| {
                let (r, snr, label) = task.records[i];
                PredictionRow {
                    listener: task.listener.clone(),
                    condition: task.noise.to_string(),
                    measure: task.name.clone(),
                    fold: fold.index,
                    utt_id: r.utt_id.clone(),
                    slot: r.slot,
                    snr,
                    prob: p,
                    predicted: p >= 0.5,
                    label,
                }
            })
            .collect();
        let mut metrics = BTreeMap::new();
        let pred: Vec<bool> = rows.iter().map(|r| r.predicted).collect();
        let lab: Vec<bool> = rows.iter().map(|r| r.label).collect();
        metrics.insert("accuracy".to_string(), accuracy_of(&pred, &lab));
        let mut by_snr: BTreeMap<String, (Vec<bool>, Vec<bool>)> = BTreeMap::new();
        for r in &rows {
            let e = by_snr.entry(format!("accuracy@{}", r.snr)).or_default();
            e.0.push(r.predicted);
            e.1.push(r.label);
        }
        for (k, (p, l)) in by_snr {
            metrics.insert(k, accuracy_of(&p, &l));
        }
        collected.lock().expect("prediction lock").insert(fold.index, rows);
        Ok(metrics)
    })
    .map_err(|e| Error::invalid(format!("{condition} {}: {e}", task.name)))?;
    cv_rows.extend(result.rows(&task.name, &condition));
    out.extend(collected.into_inner().expect("prediction lock").into_values().flatten());
    Ok(())
}

fn macro_cv(cfg: &RunConfig, task: &Task<'_>, cv_rows: &mut Vec<CvRow>, out: &mut Vec<MacroPredictionRow>) -> Result<()> {
    let condition = task.condition();
    let mut per_snr: BTreeMap<String, (f64, Vec<KeywordObs>)> = BTreeMap::new();
    for ((r, snr, label), x) in task.records.iter().zip(&task.inputs) {
        per_snr.entry(snr_key(*snr)).or_insert((*snr, Vec::new())).1.push(KeywordObs {
            utt_id: r.utt_id.clone(),
            values: x.clone(),
            correct: *label,
        });
    }
    let mut points = Vec::new();
    for (snr, obs) in per_snr.values() {
        match macro_average(obs, &condition, *snr, cfg.mapping.group_size, cfg.seeds.mapping) {
            Ok(p) => points.extend(p),
            Err(e) => log::warn!("{condition} {} at {snr} dB: {e}", task.name),
        }
    }
    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.values.clone()).collect();
    let wcs: Vec<f64> = points.iter().map(|p| p.wcs).collect();
    if points.len() < crate::mapping::mlp::MIN_REGRESSION_POINTS {
        log::warn!("{condition} {}: {} macroscopic points, skipping", task.name, points.len());
        return Ok(());
    }
    let data = Dataset::from_rows(&rows, &wcs)?;
    let plan = crate::mapping::CvPlan {
        seed: cfg.seeds.mapping ^ 0x4d41,
        ..cfg.mapping.cv.clone()
    };
    let collected: Mutex<BTreeMap<usize, Vec<MacroPredictionRow>>> = Mutex::new(BTreeMap::new());
    let name = format!("{}_macro", task.name);
    let result = run_cv(points.len(), &plan, |fold| {
        let (model, _) = fit(
            &data.select(&fold.train),
            &data.select(&fold.valid),
            Output::Linear,
            &cfg.mapping.train,
            cfg.seeds.mapping ^ fold.index as u64,
        )?;
        let test = data.select(&fold.test);
        let pred: Array1<f64> = model.predict(test.x.view())?;
        let truth: Vec<f64> = test.y.to_vec();
        let pred_v = pred.to_vec();
        let mut m = BTreeMap::new();
        if let Ok(v) = ncc(&pred_v, &truth) {
            m.insert("ncc".to_string(), v);
        }
        if let Ok(v) = rmse(&pred_v, &truth) {
            m.insert("rmse".to_string(), v);
        }
        // rank agreement of the raw measure; two-input measures are ranked by the mapping output
        let ranked: Vec<f64> = if test.x.ncols() == 1 {
            test.x.column(0).to_vec()
        } else {
            pred_v.clone()
        };
        if let Ok(v) = kendall_tau(&ranked, &truth) {
            m.insert("tau".to_string(), v);
        }
        let rows = fold
            .test
            .iter()
            .zip(&pred_v)
            .map(|(&i, &p)| MacroPredictionRow {
                listener: task.listener.clone(),
                condition: task.noise.to_string(),
                measure: task.name.clone(),
                fold: fold.index,
                group: points[i].group.clone(),
                snr: points[i].snr,
                wcs: points[i].wcs,
                predicted: p,
            })
            .collect();
        collected.lock().expect("prediction lock").insert(fold.index, rows);
        Ok(m)
    });
    match result {
        Ok(r) => {
            cv_rows.extend(r.rows(&task.name, &condition).into_iter().map(|mut row| {
                row.metric = format!("macro_{}", row.metric);
                row
            }));
            out.extend(collected.into_inner().expect("prediction lock").into_values().flatten());
        }
        Err(e) => log::warn!("{condition} {name}: {e}"),
    }
    Ok(())
}

// evaluate

fn fold_values(rows: &[CvRow], measure: &str, condition: &str, metric: &str) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.measure == measure && r.condition == condition && r.metric == metric && r.fold.parse::<usize>().is_ok())
        .map(|r| r.value)
        .filter(|v| v.is_finite())
        .collect()
}

fn split_condition(c: &str) -> (String, String) {
    match c.split_once(':') {
        Some((n, l)) => (n.to_string(), l.to_string()),
        None => (c.to_string(), NHL.to_string()),
    }
}

/// Config as echoed into the summary: everything except where outputs go
/// and how many threads ran.
pub fn config_echo(cfg: &RunConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Some(o) = v.as_object_mut() {
        o.remove("out_dir");
        o.remove("jobs");
    }
    v
}

pub fn evaluate(cfg: &RunConfig, mix_dir: &Path, listeners_dir: &Path, map_dir: &Path, dir: &Path) -> Result<()> {
    let cv: Vec<CvRow> = io::read_csv(&map_dir.join("cv.csv"))?;
    let preds: Vec<PredictionRow> = io::read_csv(&map_dir.join("predictions.csv"))?;
    let macro_preds: Vec<MacroPredictionRow> = io::read_csv(&map_dir.join("macro_predictions.csv"))?;
    let mut metrics = Metrics {
        config: config_echo(cfg),
        ..Metrics::default()
    };

    let mut keys: Vec<(String, String)> = cv.iter().map(|r| (r.measure.clone(), r.condition.clone())).collect();
    keys.sort();
    keys.dedup();
    for (measure, condition) in &keys {
        let (noise, listener) = split_condition(condition);
        let mut metric_names: Vec<&str> = cv
            .iter()
            .filter(|r| &r.measure == measure && &r.condition == condition && r.metric.starts_with("accuracy"))
            .map(|r| r.metric.as_str())
            .collect();
        metric_names.sort();
        metric_names.dedup();
        let mut snr_rows = Vec::new();
        for metric in metric_names {
            let v = fold_values(&cv, measure, condition, metric);
            let s = MeanCi::of(&v);
            let snr = metric.strip_prefix("accuracy@").unwrap_or("all").to_string();
            let n = preds
                .iter()
                .filter(|p| {
                    &p.measure == measure && p.condition == noise && p.listener == listener && (snr == "all" || p.snr.to_string() == snr)
                })
                .count();
            snr_rows.push(AccuracyRow {
                measure: measure.clone(),
                condition: noise.clone(),
                listener: listener.clone(),
                snr,
                accuracy: s.mean,
                ci95: s.ci95,
                n,
            });
        }
        snr_rows.sort_by(|a, b| {
            let key = |r: &AccuracyRow| r.snr.parse::<f64>().unwrap_or(f64::INFINITY);
            key(a).total_cmp(&key(b))
        });
        metrics.accuracy.extend(snr_rows);
        let m = |name: &str| MeanCi::of(&fold_values(&cv, measure, condition, name));
        let (c, t, r) = (m("macro_ncc"), m("macro_tau"), m("macro_rmse"));
        if !c.mean.is_nan() || !r.mean.is_nan() {
            metrics.macroscopic.push(MacroRow {
                measure: measure.clone(),
                condition: noise.clone(),
                listener: listener.clone(),
                ncc: c.mean,
                ncc_ci95: c.ci95,
                tau: t.mean,
                tau_ci95: t.ci95,
                rmse: r.mean,
                rmse_ci95: r.ci95,
            });
        }
    }

    metrics.srt = srt_rows(mix_dir, listeners_dir, &macro_preds)?;
    metrics.significance = significance(&preds);
    io::write_json(&dir.join("metrics.json"), &metrics)
}

fn fit_row(source: &str, condition: &str, listener: &str, points: &[(f64, f64)]) -> SrtRow {
    let fitted = fit_straddling(points, 4);
    if let Err(e) = &fitted {
        log::warn!("SRT of {source} ({condition}, {listener}): {e}");
    }
    let fitted = fitted.ok();
    SrtRow {
        source: source.into(),
        condition: condition.into(),
        listener: listener.into(),
        srt_db: fitted.map(|c| c.srt_db),
        slope: fitted.map(|c| c.slope),
    }
}

/// Human SRTs from the simulated responses and predicted SRTs from the
/// out-of-fold macroscopic predictions.
fn srt_rows(mix_dir: &Path, listeners_dir: &Path, macro_preds: &[MacroPredictionRow]) -> Result<Vec<SrtRow>> {
    let noisy = load_manifest(mix_dir.join(MANIFEST))?;
    let info: HashMap<&str, (NoiseType, f64)> = noisy
        .iter()
        .filter_map(|r| r.snr_db.db().map(|s| (r.id.as_str(), (r.noise_type, s))))
        .collect();
    let profiles = read_profiles(listeners_dir.join("profiles.json"))?;
    let kind: HashMap<&str, ListenerType> = profiles.iter().map(|p| (p.id.as_str(), p.kind)).collect();
    let responses: Vec<Response> = io::read_csv(&listeners_dir.join("responses.csv"))?;
    // (noise, listener group) -> per-SNR keyword scores
    let mut human: BTreeMap<(NoiseType, String), BTreeMap<String, (f64, usize, usize)>> = BTreeMap::new();
    for r in &responses {
        let Some(&(noise, snr)) = info.get(r.utt_id.as_str()) else {
            continue;
        };
        let group = match kind.get(r.listener_id.as_str()) {
            Some(ListenerType::Hil) => r.listener_id.clone(),
            _ => NHL.to_string(),
        };
        let e = human.entry((noise, group)).or_default().entry(snr_key(snr)).or_insert((snr, 0, 0));
        e.1 += usize::from(r.correct);
        e.2 += 1;
    }
    let mut out = Vec::new();
    for ((noise, group), by) in &human {
        let pts: Vec<(f64, f64)> = by.values().map(|&(s, c, n)| (s, c as f64 / n as f64)).collect();
        out.push(fit_row("human", noise.as_str(), group, &pts));
    }
    let mut by_task: BTreeMap<(String, String, String), BTreeMap<String, (f64, f64, usize)>> = BTreeMap::new();
    for p in macro_preds {
        let e = by_task
            .entry((p.condition.clone(), p.listener.clone(), p.measure.clone()))
            .or_default()
            .entry(p.group.clone())
            .or_insert((p.snr, 0.0, 0));
        e.1 += p.predicted;
        e.2 += 1;
    }
    for ((condition, listener, measure), groups) in &by_task {
        let pts: Vec<(f64, f64)> = groups.values().map(|&(s, sum, n)| (s, sum / n as f64)).collect();
        out.push(fit_row(measure, condition, listener, &pts));
    }
    Ok(out)
}

/// NORI against every other measure on the same test keywords.
fn significance(preds: &[PredictionRow]) -> Vec<SignificanceRow> {
    let mut hits: BTreeMap<(String, String, String), (u64, u64)> = BTreeMap::new();
    for p in preds {
        let e = hits
            .entry((p.condition.clone(), p.listener.clone(), p.measure.clone()))
            .or_default();
        e.0 += u64::from(p.predicted == p.label);
        e.1 += 1;
    }
    let mut out = Vec::new();
    for ((condition, listener, measure), &(ca, total)) in &hits {
        if measure != Measure::Nori.name() {
            continue;
        }
        for ((c2, l2, other), &(cb, tb)) in &hits {
            if c2 != condition || l2 != listener || other == measure || tb != total {
                continue;
            }
            let p = fishers_exact(ca, total - ca, cb, total - cb).unwrap_or(f64::NAN);
            let cond = if listener == NHL {
                condition.clone()
            } else {
                format!("{condition}:{listener}")
            };
            out.push(SignificanceRow {
                condition: cond,
                measure_a: measure.clone(),
                measure_b: other.clone(),
                correct_a: ca,
                correct_b: cb,
                total,
                p,
            });
        }
    }
    out
}

// report

pub fn report(eval_dir: &Path, dir: &Path) -> Result<()> {
    let metrics: Metrics = io::read_json(&eval_dir.join("metrics.json"))?;
    crate::eval::build_report(&metrics, dir)
}

/// Copies a report bundle (tables, plots, summary) from `from` to `to`.
pub fn publish(from: &Path, to: &Path) -> Result<()> {
    if to.exists() {
        std::fs::remove_dir_all(to).map_err(|e| Error::io(to, e))?;
    }
    for sub in ["tables", "plots"] {
        let src = from.join(sub);
        let mut names: Vec<PathBuf> = std::fs::read_dir(&src)
            .map_err(|e| Error::io(&src, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&src, err)))
            .collect::<Result<_>>()?;
        names.sort();
        for p in names {
            let name = p.file_name().expect("file name");
            io::write_text(&to.join(sub).join(name), &io::read_text(&p)?)?;
        }
    }
    io::write_text(&to.join("summary.json"), &io::read_text(&from.join("summary.json"))?)
}
