//! Expanded state graphs over word HMMs, shared by grammar decoding and
//! embedded re-estimation.

use ndarray::ArrayView2;

use super::hmm::WordHmm;
use crate::numeric::{log_add, log_sum_exp};

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Identifies the transition parameter an edge uses: state `state` of the
/// model with key `key`, either looping or leaving.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Tag {
    pub key: usize,
    pub state: usize,
    pub stay: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct Edge {
    pub from: usize,
    pub logp: f64,
    pub tag: Option<Tag>,
}

/// Which network position a state belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Item {
    Word { slot: usize, alt: usize },
    Silence { pos: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct Graph {
    /// Emission column per state.
    pub emit: Vec<usize>,
    pub item: Vec<Item>,
    pub preds: Vec<Vec<Edge>>,
    pub init: Vec<f64>,
    pub fin: Vec<(f64, Option<Tag>)>,
    /// `(model key, local state)` for each emission column.
    pub columns: Vec<(usize, usize)>,
    /// Frames `[lo, hi)` in which each state may be occupied.
    pub window: Vec<(usize, usize)>,
}

pub(crate) struct NetModel<'a> {
    pub hmm: &'a WordHmm,
    pub key: usize,
}

impl Graph {
    pub fn len(&self) -> usize {
        self.emit.len()
    }

    /// Restricts the states of each network position to a frame range.
    pub fn restrict(&mut self, window_of: impl Fn(Item) -> (usize, usize)) {
        for (w, &item) in self.window.iter_mut().zip(&self.item) {
            *w = window_of(item);
        }
    }

    #[inline]
    fn active(&self, j: usize, t: usize) -> bool {
        let (lo, hi) = self.window[j];
        t >= lo && t < hi
    }

    /// Fixed slot sequence with alternatives per slot and, when `silence` is
    /// given, an optional silence before, between, and after the slots, each
    /// inserted with probability `sil_prob`.
    pub fn network(slots: &[Vec<NetModel<'_>>], silence: Option<&NetModel<'_>>, sil_prob: f64) -> Graph {
        let mut g = Graph {
            emit: Vec::new(),
            item: Vec::new(),
            preds: Vec::new(),
            init: Vec::new(),
            fin: Vec::new(),
            columns: Vec::new(),
            window: Vec::new(),
        };
        let (ln_sil, ln_word) = match silence {
            Some(_) => (sil_prob.ln(), (1.0 - sil_prob).ln()),
            None => (NEG_INF, 0.0),
        };
        // Exits of the previous position: (last state, logp, tag).
        let mut word_exits: Vec<(usize, f64, Option<Tag>)> = Vec::new();
        let mut sil_exit: Option<(usize, f64, Option<Tag>)> = None;
        let n = slots.len();
        for pos in 0..=n {
            if let Some(sil) = silence {
                let first = g.add_model(sil, Item::Silence { pos });
                let last = g.len() - 1;
                let h = sil.hmm;
                if pos == 0 {
                    g.init[first] = ln_sil + h.log_entry();
                } else {
                    for &(from, lp, tag) in &word_exits {
                        g.preds[first].push(Edge {
                            from,
                            logp: lp + ln_sil + h.log_entry(),
                            tag,
                        });
                    }
                }
                let s = h.n_states();
                sil_exit = Some((last, h.log_next(s - 1), Some(leave(sil.key, s - 1))));
            }
            if pos == n {
                break;
            }
            let mut exits = Vec::with_capacity(slots[pos].len());
            for (alt, m) in slots[pos].iter().enumerate() {
                let first = g.add_model(m, Item::Word { slot: pos, alt });
                let h = m.hmm;
                if pos == 0 {
                    g.init[first] = ln_word + h.log_entry();
                } else {
                    for &(from, lp, tag) in &word_exits {
                        g.preds[first].push(Edge {
                            from,
                            logp: lp + ln_word + h.log_entry(),
                            tag,
                        });
                    }
                }
                if let Some((from, lp, tag)) = sil_exit {
                    g.preds[first].push(Edge {
                        from,
                        logp: lp + h.log_entry(),
                        tag,
                    });
                }
                let s = h.n_states();
                exits.push((g.len() - 1, h.log_next(s - 1), Some(leave(m.key, s - 1))));
            }
            word_exits = exits;
            sil_exit = None;
        }
        for &(state, lp, tag) in &word_exits {
            g.fin[state] = (lp + ln_word, tag);
        }
        if let Some((state, lp, tag)) = sil_exit {
            g.fin[state] = (lp, tag);
        }
        g
    }

    /// Appends the emitting states of one model; returns the first state index.
    fn add_model(&mut self, m: &NetModel<'_>, item: Item) -> usize {
        let base = self.len();
        let h = m.hmm;
        for k in 0..h.n_states() {
            let col = match self.columns.iter().position(|&c| c == (m.key, k)) {
                Some(c) => c,
                None => {
                    self.columns.push((m.key, k));
                    self.columns.len() - 1
                }
            };
            self.emit.push(col);
            self.item.push(item);
            self.init.push(NEG_INF);
            self.fin.push((NEG_INF, None));
            self.window.push((0, usize::MAX));
            let mut preds = Vec::with_capacity(2);
            if k > 0 {
                preds.push(Edge {
                    from: base + k - 1,
                    logp: h.log_next(k - 1),
                    tag: Some(leave(m.key, k - 1)),
                });
            }
            preds.push(Edge {
                from: base + k,
                logp: h.log_self(k),
                tag: Some(Tag {
                    key: m.key,
                    state: k,
                    stay: true,
                }),
            });
            self.preds.push(preds);
        }
        base
    }

    /// Emission matrix `T × columns`, row-major, and the per-component log
    /// terms when `components` is set (`T × columns × M`).
    pub fn emissions<'m>(&self, models: &dyn Fn(usize) -> &'m WordHmm, obs: ArrayView2<f64>, components: bool) -> Emissions {
        let c = self.columns.len();
        let t_len = obs.nrows();
        let mmax = self
            .columns
            .iter()
            .map(|&(k, s)| models(k).state(s).n_components())
            .max()
            .unwrap_or(1);
        let mut col_window = vec![(usize::MAX, 0usize); c];
        for (j, &col) in self.emit.iter().enumerate() {
            let (lo, hi) = self.window[j];
            col_window[col] = (col_window[col].0.min(lo), col_window[col].1.max(hi));
        }
        let mut em = vec![NEG_INF; t_len * c];
        let mut comp = if components { vec![NEG_INF; t_len * c * mmax] } else { Vec::new() };
        let mut buf = vec![0.0; mmax];
        let mut x = vec![0.0; obs.ncols()];
        for t in 0..t_len {
            for (d, v) in obs.row(t).iter().enumerate() {
                x[d] = *v;
            }
            for (ci, &(k, s)) in self.columns.iter().enumerate() {
                if t < col_window[ci].0 || t >= col_window[ci].1 {
                    continue;
                }
                let g = models(k).state(s);
                let m = g.n_components();
                g.component_log_probs(&x, &mut buf[..m]);
                em[t * c + ci] = log_sum_exp(&buf[..m]);
                if components {
                    comp[(t * c + ci) * mmax..(t * c + ci) * mmax + m].copy_from_slice(&buf[..m]);
                }
            }
        }
        Emissions {
            t_len,
            cols: c,
            mmax,
            em,
            comp,
        }
    }

    fn start(&self, j: usize, e: &Emissions) -> f64 {
        if self.active(j, 0) {
            self.init[j] + e.at(0, self.emit[j])
        } else {
            NEG_INF
        }
    }

    pub fn successors(&self) -> Vec<Vec<(usize, f64, Option<Tag>)>> {
        let mut succ = vec![Vec::new(); self.len()];
        for (j, preds) in self.preds.iter().enumerate() {
            for e in preds {
                succ[e.from].push((j, e.logp, e.tag));
            }
        }
        succ
    }

    /// Best state sequence. Ties go to the lowest predecessor index and, at
    /// the end, to the lowest final state.
    pub fn viterbi(&self, e: &Emissions) -> Option<(f64, Vec<usize>)> {
        let n = self.len();
        let t_len = e.t_len;
        if t_len == 0 {
            return None;
        }
        let mut delta: Vec<f64> = (0..n).map(|j| self.start(j, e)).collect();
        let mut next = vec![NEG_INF; n];
        let mut back = vec![0u32; t_len * n];
        for t in 1..t_len {
            for j in 0..n {
                if !self.active(j, t) {
                    next[j] = NEG_INF;
                    continue;
                }
                let mut best = NEG_INF;
                let mut arg = u32::MAX;
                for edge in &self.preds[j] {
                    let v = delta[edge.from] + edge.logp;
                    if v > best || (v == best && (edge.from as u32) < arg) {
                        best = v;
                        arg = edge.from as u32;
                    }
                }
                next[j] = best + e.at(t, self.emit[j]);
                back[t * n + j] = arg;
            }
            std::mem::swap(&mut delta, &mut next);
        }
        let mut best = NEG_INF;
        let mut end = usize::MAX;
        for j in 0..n {
            let v = if self.active(j, t_len - 1) {
                delta[j] + self.fin[j].0
            } else {
                NEG_INF
            };
            if v > best {
                best = v;
                end = j;
            }
        }
        if best == NEG_INF || best.is_nan() {
            return None;
        }
        let mut path = vec![end; t_len];
        for t in (1..t_len).rev() {
            path[t - 1] = back[t * n + path[t]] as usize;
        }
        Some((best, path))
    }

    /// Log-domain forward pass only.
    #[cfg(test)]
    pub fn forward(&self, e: &Emissions) -> f64 {
        let n = self.len();
        if e.t_len == 0 {
            return NEG_INF;
        }
        let mut alpha: Vec<f64> = (0..n).map(|j| self.start(j, e)).collect();
        let mut next = vec![NEG_INF; n];
        for t in 1..e.t_len {
            for j in 0..n {
                if !self.active(j, t) {
                    next[j] = NEG_INF;
                    continue;
                }
                let mut acc = NEG_INF;
                for edge in &self.preds[j] {
                    acc = log_add(acc, alpha[edge.from] + edge.logp);
                }
                next[j] = acc + e.at(t, self.emit[j]);
            }
            std::mem::swap(&mut alpha, &mut next);
        }
        (0..n).fold(NEG_INF, |acc, j| log_add(acc, alpha[j] + self.fin[j].0))
    }

    /// Forward-backward. Returns the total log-likelihood and state
    /// occupancies `γ` (`T × N`, probabilities), and adds expected counts of
    /// tagged transitions into `on_transition`. `None` if no path exists.
    pub fn forward_backward(&self, e: &Emissions, on_transition: &mut dyn FnMut(Tag, f64)) -> Option<(f64, Vec<f64>)> {
        let n = self.len();
        let t_len = e.t_len;
        if t_len == 0 {
            return None;
        }
        let mut alpha = vec![NEG_INF; t_len * n];
        for j in 0..n {
            alpha[j] = self.start(j, e);
        }
        for t in 1..t_len {
            for j in 0..n {
                if !self.active(j, t) {
                    continue;
                }
                let mut acc = NEG_INF;
                for edge in &self.preds[j] {
                    acc = log_add(acc, alpha[(t - 1) * n + edge.from] + edge.logp);
                }
                alpha[t * n + j] = acc + e.at(t, self.emit[j]);
            }
        }
        let last = (t_len - 1) * n;
        let total = (0..n).fold(NEG_INF, |acc, j| log_add(acc, alpha[last + j] + self.fin[j].0));
        if !total.is_finite() {
            return None;
        }
        let succ = self.successors();
        let mut beta = vec![NEG_INF; t_len * n];
        for j in 0..n {
            if self.active(j, t_len - 1) {
                beta[last + j] = self.fin[j].0;
            }
        }
        for t in (0..t_len - 1).rev() {
            for i in 0..n {
                if !self.active(i, t) {
                    continue;
                }
                let mut acc = NEG_INF;
                for &(j, lp, _) in &succ[i] {
                    acc = log_add(acc, lp + e.at(t + 1, self.emit[j]) + beta[(t + 1) * n + j]);
                }
                beta[t * n + i] = acc;
            }
        }
        let gamma: Vec<f64> = alpha
            .iter()
            .zip(&beta)
            .map(|(a, b)| {
                let v = a + b - total;
                if v == NEG_INF || v.is_nan() {
                    0.0
                } else {
                    v.exp()
                }
            })
            .collect();
        for t in 0..t_len - 1 {
            for i in 0..n {
                let a = alpha[t * n + i];
                if a == NEG_INF {
                    continue;
                }
                for &(j, lp, tag) in &succ[i] {
                    if let Some(tag) = tag {
                        let v = a + lp + e.at(t + 1, self.emit[j]) + beta[(t + 1) * n + j] - total;
                        if v > -700.0 {
                            on_transition(tag, v.exp());
                        }
                    }
                }
            }
        }
        for j in 0..n {
            if let (lp, Some(tag)) = self.fin[j] {
                let v = alpha[last + j] + lp - total;
                if v > -700.0 {
                    on_transition(tag, v.exp());
                }
            }
        }
        Some((total, gamma))
    }
}

fn leave(key: usize, state: usize) -> Tag {
    Tag { key, state, stay: false }
}

pub(crate) struct Emissions {
    pub t_len: usize,
    pub cols: usize,
    pub mmax: usize,
    em: Vec<f64>,
    comp: Vec<f64>,
}

impl Emissions {
    #[inline]
    pub fn at(&self, t: usize, col: usize) -> f64 {
        self.em[t * self.cols + col]
    }

    /// Per-component log terms of column `col` at frame `t`.
    pub fn components(&self, t: usize, col: usize) -> &[f64] {
        let o = (t * self.cols + col) * self.mmax;
        &self.comp[o..o + self.mmax]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asr::hmm::tests::random_hmm;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn single_model_network_matches_word_forward_with_exit() {
        let mut r = crate::seed::rng(&[7]);
        for _ in 0..30 {
            let s = r.random_range(1..=4);
            let t = r.random_range(s..=8);
            let h = random_hmm(&mut r, "w", s, 2);
            let o = Array2::from_shape_fn((t, 2), |_| r.random_range(-1.0..1.0));
            let net = Graph::network(&[vec![NetModel { hmm: &h, key: 0 }]], None, 0.5);
            let e = net.emissions(&|_| &h, o.view(), false);
            let b = h.emissions(o.view()).unwrap();
            let expect = h.forward_from_emissions(&b) + h.log_next(s - 1);
            assert!((net.forward(&e) - expect).abs() < 1e-9 * expect.abs().max(1.0));
            let (fb, gamma) = net.forward_backward(&e, &mut |_, _| {}).unwrap();
            assert!((fb - expect).abs() < 1e-9 * expect.abs().max(1.0));
            for tt in 0..t {
                let occ: f64 = gamma[tt * s..(tt + 1) * s].iter().sum();
                assert!((occ - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn transition_counts_sum_to_frames() {
        let mut r = crate::seed::rng(&[8]);
        let a = random_hmm(&mut r, "a", 2, 2);
        let b = random_hmm(&mut r, "b", 3, 2);
        let sil = random_hmm(&mut r, "sil", 3, 2);
        let net = Graph::network(
            &[vec![NetModel { hmm: &a, key: 0 }], vec![NetModel { hmm: &b, key: 1 }]],
            Some(&NetModel { hmm: &sil, key: 2 }),
            0.5,
        );
        let models = [&a, &b, &sil];
        let o = Array2::from_shape_fn((20, 2), |_| r.random_range(-1.0..1.0));
        let e = net.emissions(&|k| models[k], o.view(), false);
        let mut total = 0.0;
        net.forward_backward(&e, &mut |_, c| total += c).unwrap();
        // every frame leaves its state exactly once (including the final exit)
        assert!((total - 20.0).abs() < 1e-9, "{total}");
    }
}
