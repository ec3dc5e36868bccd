//! Word-model training: flat start, Viterbi initialization, embedded
//! Baum-Welch re-estimation with a mixture split.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::decode::DecodeConfig;
use super::gmm::DiagGmm;
use super::graph::{Graph, Item, NetModel, Tag};
use super::hmm::WordHmm;
use super::models::{Condition, ModelSet, TrainingMeta};
use crate::corpus::GrammarSpec;
use crate::error::{Error, Result};

const CHUNK: usize = 16;
const MIN_GAMMA: f64 = 1e-8;
const MIN_OCC: f64 = 1e-3;
const LOOP_RANGE: (f64, f64) = (1e-3, 0.999);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Upper bound on embedded re-estimation iterations (all stages).
    pub max_iterations: usize,
    /// Single-Gaussian iterations before the mixture split.
    pub single_gaussian_iterations: usize,
    pub viterbi_init_iterations: usize,
    pub rel_tolerance: f64,
    pub n_components: usize,
    pub split_factor: f64,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub var_floor: f64,
    pub min_count: usize,
    pub states_per_phoneme: usize,
    pub silence_states: usize,
    /// During re-estimation each word may only occupy frames within this
    /// many frames of its reference span (`None` disables the constraint).
    pub span_margin: Option<usize>,
    pub decode: DecodeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            single_gaussian_iterations: 5,
            viterbi_init_iterations: 3,
            rel_tolerance: 1e-4,
            n_components: 2,
            split_factor: 0.2,
            var_floor: 0.01,
            min_count: 3,
            states_per_phoneme: 3,
            silence_states: 3,
            span_margin: Some(10),
            decode: DecodeConfig::default(),
        }
    }
}

/// One training utterance: features, the word index chosen in each slot,
/// and the reference frame span `[start, end)` of each word.
#[derive(Debug, Clone)]
pub struct TrainUtterance<'a> {
    pub frames: ArrayView2<'a, f64>,
    pub words: Vec<usize>,
    pub spans: Vec<(usize, usize)>,
}

/// Sufficient statistics of one emitting state.
#[derive(Debug, Clone)]
struct StateAcc {
    occ: Vec<f64>,
    sum: Vec<f64>,
    sq: Vec<f64>,
    stay: f64,
    leave: f64,
}

impl StateAcc {
    fn new(m: usize, dim: usize) -> Self {
        Self {
            occ: vec![0.0; m],
            sum: vec![0.0; m * dim],
            sq: vec![0.0; m * dim],
            stay: 0.0,
            leave: 0.0,
        }
    }

    fn add_frame(&mut self, m: usize, w: f64, x: &[f64]) {
        let d = x.len();
        self.occ[m] += w;
        let s = &mut self.sum[m * d..(m + 1) * d];
        let q = &mut self.sq[m * d..(m + 1) * d];
        for k in 0..d {
            s[k] += w * x[k];
            q[k] += w * x[k] * x[k];
        }
    }

    fn merge(&mut self, o: &StateAcc) {
        for (a, b) in self.occ.iter_mut().zip(&o.occ) {
            *a += b;
        }
        for (a, b) in self.sum.iter_mut().zip(&o.sum) {
            *a += b;
        }
        for (a, b) in self.sq.iter_mut().zip(&o.sq) {
            *a += b;
        }
        self.stay += o.stay;
        self.leave += o.leave;
    }
}

/// Accumulators for every model (indexed by key) and the summed log-likelihood.
#[derive(Debug, Clone)]
struct Accumulator {
    models: Vec<Vec<StateAcc>>,
    loglik: f64,
    used: usize,
}

impl Accumulator {
    fn new(models: &[WordHmm]) -> Self {
        Self {
            models: models
                .iter()
                .map(|h| h.states().iter().map(|g| StateAcc::new(g.n_components(), h.dim())).collect())
                .collect(),
            loglik: 0.0,
            used: 0,
        }
    }

    fn merge(&mut self, o: &Accumulator) {
        for (a, b) in self.models.iter_mut().zip(&o.models) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
        self.loglik += o.loglik;
        self.used += o.used;
    }

    fn on_transition(&mut self, tag: Tag, c: f64) {
        let s = &mut self.models[tag.key][tag.state];
        if tag.stay {
            s.stay += c;
        } else {
            s.leave += c;
        }
    }
}

struct Layout {
    /// Key of each (slot, word); silence is the last key when present.
    offsets: Vec<usize>,
    silence: Option<usize>,
}

impl Layout {
    fn key(&self, slot: usize, word: usize) -> usize {
        self.offsets[slot] + word
    }
}

/// Trains a full model set for one condition.
pub fn train_models(
    grammar: &GrammarSpec,
    utts: &[TrainUtterance<'_>],
    condition: Condition,
    fold: usize,
    config: &TrainConfig,
) -> Result<ModelSet> {
    grammar.validate()?;
    let first = utts
        .first()
        .ok_or_else(|| Error::InsufficientData("no training utterances".into()))?;
    let dim = first.frames.ncols();
    let n_slots = grammar.slots.len();
    for u in utts {
        if u.frames.ncols() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: u.frames.ncols(),
            });
        }
        if u.words.len() != n_slots || u.spans.len() != n_slots {
            return Err(Error::invalid("training utterance must give one word and span per slot"));
        }
    }
    let mut counts: Vec<Vec<usize>> = grammar.slots.iter().map(|s| vec![0; s.words.len()]).collect();
    for u in utts {
        for (s, &w) in u.words.iter().enumerate() {
            *counts[s].get_mut(w).ok_or_else(|| Error::invalid("word index out of range"))? += 1;
        }
    }
    for (s, c) in counts.iter().enumerate() {
        for (w, &n) in c.iter().enumerate() {
            if n < config.min_count {
                return Err(Error::InsufficientData(format!(
                    "word `{}` of slot {s} occurs {n} times (need {})",
                    grammar.word(s, w).id,
                    config.min_count
                )));
            }
        }
    }

    let mut offsets = Vec::with_capacity(n_slots);
    let mut total = 0;
    for s in &grammar.slots {
        offsets.push(total);
        total += s.words.len();
    }
    let layout = Layout {
        offsets,
        silence: config.decode.silence.then_some(total),
    };

    let (_, gvar) = global_stats(utts, dim);
    if gvar.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::NonFinite("global feature variance".into()));
    }
    let floor: Vec<f64> = gvar.iter().map(|v| v * config.var_floor).collect();

    let mut models = flat_start(grammar, utts, &layout, config, &gvar)?;
    for _ in 0..config.viterbi_init_iterations {
        models = viterbi_reestimate(&models, utts, &layout, &floor)?;
    }

    let mut history = Vec::new();
    let mut stage_starts = vec![0];
    let mut single_stage = config.n_components > 1;
    let mut in_stage = 0usize;
    let mut used = 0;
    for _ in 0..config.max_iterations {
        let acc = e_step(&models, utts, &layout, config)?;
        used = acc.used;
        let ll = acc.loglik;
        if !ll.is_finite() {
            return Err(Error::NonFinite("training log-likelihood".into()));
        }
        let converged = in_stage > 0 && {
            let prev = *history.last().expect("stage has history");
            (ll - prev) / f64::abs(prev) < config.rel_tolerance
        };
        history.push(ll);
        models = m_step(&models, &acc, &floor)?;
        in_stage += 1;
        if single_stage {
            if converged || in_stage >= config.single_gaussian_iterations {
                models = split_all(&models, config)?;
                single_stage = false;
                in_stage = 0;
                stage_starts.push(history.len());
            }
        } else if converged {
            break;
        }
    }

    let silence = layout.silence.map(|k| models[k].clone());
    let mut slots = Vec::with_capacity(n_slots);
    for (s, slot) in grammar.slots.iter().enumerate() {
        slots.push((0..slot.words.len()).map(|w| models[layout.key(s, w)].clone()).collect());
    }
    Ok(ModelSet {
        condition,
        slots,
        silence,
        meta: TrainingMeta {
            fold,
            iterations: history.len(),
            final_log_likelihood: history.last().copied().unwrap_or(f64::NEG_INFINITY),
            history,
            stage_starts,
            num_utterances: used,
        },
    })
}

fn global_stats(utts: &[TrainUtterance<'_>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0.0;
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for u in utts {
        for row in u.frames.rows() {
            n += 1.0;
            for (d, v) in row.iter().enumerate() {
                sum[d] += v;
                sq[d] += v * v;
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let var = sq.iter().zip(&mean).map(|(q, m)| q / n - m * m).collect();
    (mean, var)
}

/// Frame ranges of the gaps between (and around) the word spans.
fn gaps(u: &TrainUtterance<'_>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut pos = 0;
    for &(s, e) in &u.spans {
        if s > pos {
            out.push((pos, s));
        }
        pos = pos.max(e);
    }
    if u.frames.nrows() > pos {
        out.push((pos, u.frames.nrows()));
    }
    out
}

/// Per-key list of (utterance, frame span) occurrences.
fn occurrences(utts: &[TrainUtterance<'_>], layout: &Layout, n_keys: usize, min_sil: usize) -> Vec<Vec<(usize, usize, usize)>> {
    let mut occ = vec![Vec::new(); n_keys];
    for (ui, u) in utts.iter().enumerate() {
        for (s, (&w, &(a, b))) in u.words.iter().zip(&u.spans).enumerate() {
            if b > a {
                occ[layout.key(s, w)].push((ui, a, b));
            }
        }
        if let Some(k) = layout.silence {
            for (a, b) in gaps(u) {
                if b - a >= min_sil {
                    occ[k].push((ui, a, b));
                }
            }
        }
    }
    occ
}

fn flat_start(
    grammar: &GrammarSpec,
    utts: &[TrainUtterance<'_>],
    layout: &Layout,
    config: &TrainConfig,
    gvar: &[f64],
) -> Result<Vec<WordHmm>> {
    let mut shapes: Vec<(String, usize)> = Vec::new();
    for slot in &grammar.slots {
        for w in &slot.words {
            shapes.push((w.id.clone(), config.states_per_phoneme * w.phonemes));
        }
    }
    if layout.silence.is_some() {
        shapes.push(("sil".to_string(), config.silence_states));
    }
    let occ = occurrences(utts, layout, shapes.len(), config.silence_states);
    let dim = gvar.len();
    let (gmean, _) = global_stats(utts, dim);
    shapes
        .iter()
        .enumerate()
        .map(|(k, (id, s))| {
            let s = *s;
            let mut sums = vec![vec![0.0; dim]; s];
            let mut n = vec![0.0; s];
            let mut stays = vec![0.0; s];
            let mut leaves = vec![0.0; s];
            for &(ui, a, b) in &occ[k] {
                let len = b - a;
                for t in 0..len {
                    let st = (t * s / len).min(s - 1);
                    n[st] += 1.0;
                    for (d, v) in utts[ui].frames.row(a + t).iter().enumerate() {
                        sums[st][d] += v;
                    }
                }
                for st in 0..s {
                    let frames = (0..len).filter(|&t| (t * s / len).min(s - 1) == st).count() as f64;
                    if frames > 0.0 {
                        stays[st] += frames - 1.0;
                        leaves[st] += 1.0;
                    }
                }
            }
            let states = (0..s)
                .map(|st| {
                    let mean = if n[st] > 0.0 {
                        sums[st].iter().map(|v| v / n[st]).collect()
                    } else {
                        gmean.clone()
                    };
                    DiagGmm::single(mean, gvar.to_vec())
                })
                .collect::<Result<Vec<_>>>()?;
            let loops: Vec<f64> = (0..s).map(|st| loop_prob(stays[st], leaves[st], 0.5)).collect();
            WordHmm::left_to_right(id.clone(), states, &loops)
        })
        .collect()
}

fn loop_prob(stay: f64, leave: f64, fallback: f64) -> f64 {
    if stay + leave > 0.0 {
        (stay / (stay + leave)).clamp(LOOP_RANGE.0, LOOP_RANGE.1)
    } else {
        fallback
    }
}

/// Re-estimates single Gaussians from Viterbi state alignments of each
/// reference word span (and each silence gap) to its own model.
fn viterbi_reestimate(models: &[WordHmm], utts: &[TrainUtterance<'_>], layout: &Layout, floor: &[f64]) -> Result<Vec<WordHmm>> {
    let min_sil = layout.silence.map_or(1, |k| models[k].n_states());
    let occ = occurrences(utts, layout, models.len(), min_sil);
    let dim = floor.len();
    models
        .par_iter()
        .enumerate()
        .map(|(k, h)| {
            let s = h.n_states();
            let mut acc: Vec<StateAcc> = (0..s).map(|_| StateAcc::new(1, dim)).collect();
            for &(ui, a, b) in &occ[k] {
                if b - a < s {
                    continue;
                }
                let seg = utts[ui].frames.slice(ndarray::s![a..b, ..]);
                let em = h.emissions(seg)?;
                let (score, path) = h.viterbi_from_emissions(&em);
                if score == f64::NEG_INFINITY {
                    continue;
                }
                for (t, &st) in path.iter().enumerate() {
                    let x = seg.row(t).to_vec();
                    acc[st].add_frame(0, 1.0, &x);
                    if t + 1 < path.len() && path[t + 1] == st {
                        acc[st].stay += 1.0;
                    } else {
                        acc[st].leave += 1.0;
                    }
                }
            }
            let single: Vec<DiagGmm> = h
                .states()
                .iter()
                .zip(&acc)
                .map(|(g, a)| {
                    if a.occ[0] < 2.0 {
                        return Ok(g.clone());
                    }
                    let (mean, var) = moments(a, 0, dim, floor);
                    DiagGmm::single(mean, var)
                })
                .collect::<Result<_>>()?;
            let loops: Vec<f64> = (0..s).map(|i| loop_prob(acc[i].stay, acc[i].leave, h.log_self(i).exp())).collect();
            WordHmm::left_to_right(h.id(), single, &loops)
        })
        .collect()
}

fn moments(a: &StateAcc, m: usize, dim: usize, floor: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = a.occ[m];
    let mean: Vec<f64> = a.sum[m * dim..(m + 1) * dim].iter().map(|v| v / n).collect();
    let var = a.sq[m * dim..(m + 1) * dim]
        .iter()
        .zip(&mean)
        .zip(floor)
        .map(|((q, mu), f)| (q / n - mu * mu).max(*f))
        .collect();
    (mean, var)
}

fn utterance_graph(models: &[WordHmm], u: &TrainUtterance<'_>, layout: &Layout, sil_prob: f64, margin: Option<usize>) -> Graph {
    let slots: Vec<Vec<NetModel<'_>>> = u
        .words
        .iter()
        .enumerate()
        .map(|(s, &w)| {
            let key = layout.key(s, w);
            vec![NetModel { hmm: &models[key], key }]
        })
        .collect();
    let sil = layout.silence.map(|k| NetModel { hmm: &models[k], key: k });
    let mut g = Graph::network(&slots, sil.as_ref(), sil_prob);
    if let Some(margin) = margin {
        let t_len = u.frames.nrows();
        let n = u.spans.len();
        g.restrict(|item| match item {
            Item::Word { slot, .. } => {
                let (a, b) = u.spans[slot];
                (a.saturating_sub(margin), (b + margin).min(t_len))
            }
            Item::Silence { pos } => {
                let lo = if pos == 0 { 0 } else { u.spans[pos - 1].1.saturating_sub(margin) };
                let hi = if pos == n { t_len } else { (u.spans[pos].0 + margin).min(t_len) };
                (lo, hi)
            }
        });
    }
    g
}

fn e_step(models: &[WordHmm], utts: &[TrainUtterance<'_>], layout: &Layout, config: &TrainConfig) -> Result<Accumulator> {
    let sil_prob = config.decode.silence_prob;
    let partial: Vec<Accumulator> = utts
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Accumulator::new(models);
            for u in chunk {
                let g = utterance_graph(models, u, layout, sil_prob, config.span_margin);
                let e = g.emissions(&|k| &models[k], u.frames, true);
                let Some((ll, gamma)) = g.forward_backward(&e, &mut |tag, c| acc.on_transition(tag, c)) else {
                    continue;
                };
                acc.loglik += ll;
                acc.used += 1;
                let n = g.len();
                let mut x = vec![0.0; u.frames.ncols()];
                for t in 0..e.t_len {
                    let row = &gamma[t * n..(t + 1) * n];
                    if row.iter().all(|&v| v < MIN_GAMMA) {
                        continue;
                    }
                    for (d, v) in u.frames.row(t).iter().enumerate() {
                        x[d] = *v;
                    }
                    for (j, &gm) in row.iter().enumerate() {
                        if gm < MIN_GAMMA {
                            continue;
                        }
                        let col = g.emit[j];
                        let (key, st) = g.columns[col];
                        let total = e.at(t, col);
                        let comps = e.components(t, col);
                        let m_count = models[key].state(st).n_components();
                        for (m, &c) in comps.iter().enumerate().take(m_count) {
                            let w = gm * (c - total).exp();
                            if w > 0.0 {
                                acc.models[key][st].add_frame(m, w, &x);
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = Accumulator::new(models);
    for p in &partial {
        total.merge(p);
    }
    if total.used == 0 {
        return Err(Error::InsufficientData("no training utterance admits a path".into()));
    }
    Ok(total)
}

fn m_step(models: &[WordHmm], acc: &Accumulator, floor: &[f64]) -> Result<Vec<WordHmm>> {
    let dim = floor.len();
    models
        .iter()
        .zip(&acc.models)
        .map(|(h, a)| {
            let states = h
                .states()
                .iter()
                .zip(a)
                .map(|(g, sa)| {
                    let total: f64 = sa.occ.iter().sum();
                    if total < MIN_OCC {
                        return Ok(g.clone());
                    }
                    let mut w = Vec::with_capacity(g.n_components());
                    let mut mu = Vec::with_capacity(g.n_components());
                    let mut var = Vec::with_capacity(g.n_components());
                    for m in 0..g.n_components() {
                        if sa.occ[m] < MIN_OCC {
                            w.push(MIN_OCC / total);
                            mu.push(g.means()[m].clone());
                            var.push(g.vars()[m].clone());
                        } else {
                            let (mean, v) = moments(sa, m, dim, floor);
                            w.push(sa.occ[m] / total);
                            mu.push(mean);
                            var.push(v);
                        }
                    }
                    let z: f64 = w.iter().sum();
                    for x in &mut w {
                        *x /= z;
                    }
                    if mu.iter().chain(&var).flatten().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite(format!("statistics of `{}`", h.id())));
                    }
                    DiagGmm::new(w, mu, var)
                })
                .collect::<Result<Vec<_>>>()?;
            let loops: Vec<f64> = (0..h.n_states())
                .map(|i| loop_prob(a[i].stay, a[i].leave, h.log_self(i).exp()))
                .collect();
            WordHmm::left_to_right(h.id(), states, &loops)
        })
        .collect()
}

fn split_all(models: &[WordHmm], config: &TrainConfig) -> Result<Vec<WordHmm>> {
    models
        .iter()
        .map(|h| {
            let states: Vec<DiagGmm> = h
                .states()
                .iter()
                .map(|g| {
                    let mut g = g.clone();
                    while g.n_components() < config.n_components {
                        g = g.split(config.split_factor);
                    }
                    g
                })
                .collect();
            let loops: Vec<f64> = (0..h.n_states()).map(|i| h.log_self(i).exp()).collect();
            WordHmm::left_to_right(h.id(), states, &loops)
        })
        .collect()
}

/// Converts a sample range to the frames whose centres fall inside it.
pub fn samples_to_frames(start: usize, end: usize, frame_len: usize, shift: usize, n_frames: usize) -> (usize, usize) {
    let half = frame_len / 2;
    let first = |s: usize| if s <= half { 0 } else { (s - half).div_ceil(shift) };
    (first(start).min(n_frames), first(end).min(n_frames))
}
