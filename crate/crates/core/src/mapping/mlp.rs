//! One-hidden-layer perceptron with stored input standardization.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::io;
use crate::seed::rng;
use crate::{Error, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const HIDDEN_UNITS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Output {
    /// Logistic unit trained on cross-entropy.
    Logistic,
    /// Linear unit trained on mean squared error.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Per-column mean and population SD; constant columns get SD 1.
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean: Vec<f64> = x.mean_axis(Axis(0)).map_or_else(|| vec![0.0; x.ncols()], |m| m.to_vec());
        let std = x
            .axis_iter(Axis(1))
            .zip(&mean)
            .map(|(c, m)| {
                let v = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
                if v > 1e-24 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.to_owned();
        for mut row in z.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    /// `hidden × inputs`, row-major.
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub schema_version: u32,
    /// Input, hidden and output sizes.
    pub dims: [usize; 3],
    pub activation: String,
    pub output: Output,
    pub weights: Weights,
    pub standardization: Standardization,
}

impl MlpModel {
    /// A model with all weights zero and identity standardization.
    pub fn zeros(inputs: usize, output: Output) -> Self {
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            dims: [inputs, HIDDEN_UNITS, 1],
            activation: "tanh".into(),
            output,
            weights: Weights {
                w1: vec![vec![0.0; inputs]; HIDDEN_UNITS],
                b1: vec![0.0; HIDDEN_UNITS],
                w2: vec![0.0; HIDDEN_UNITS],
                b2: 0.0,
            },
            standardization: Standardization {
                mean: vec![0.0; inputs],
                std: vec![1.0; inputs],
            },
        }
    }

    pub fn inputs(&self) -> usize {
        self.dims[0]
    }

    /// Flat parameter vector: w1 (row-major), b1, w2, b2.
    pub fn params(&self) -> Vec<f64> {
        let w = &self.weights;
        let mut p: Vec<f64> = w.w1.iter().flatten().copied().collect();
        p.extend(&w.b1);
        p.extend(&w.w2);
        p.push(w.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (d, h) = (self.dims[0], self.dims[1]);
        assert_eq!(p.len(), h * d + 2 * h + 1, "parameter vector length");
        for (j, row) in self.weights.w1.iter_mut().enumerate() {
            row.copy_from_slice(&p[j * d..(j + 1) * d]);
        }
        self.weights.b1.copy_from_slice(&p[h * d..h * d + h]);
        self.weights.w2.copy_from_slice(&p[h * d + h..h * d + 2 * h]);
        self.weights.b2 = p[h * d + 2 * h];
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        let [d, h, o] = self.dims;
        let w = &self.weights;
        let shapes_ok = o == 1
            && w.w1.len() == h
            && w.w1.iter().all(|r| r.len() == d)
            && w.b1.len() == h
            && w.w2.len() == h
            && self.standardization.mean.len() == d
            && self.standardization.std.len() == d;
        if !shapes_ok || self.activation != "tanh" {
            return Err(Error::invalid("malformed mapping model"));
        }
        if self.params().iter().any(|v| !v.is_finite()) || self.standardization.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::NonFinite("mapping model weights".into()));
        }
        Ok(())
    }

    fn w1(&self) -> Array2<f64> {
        let (d, h) = (self.dims[0], self.dims[1]);
        Array2::from_shape_fn((h, d), |(j, i)| self.weights.w1[j][i])
    }

    /// Network output on already standardized rows.
    fn forward(&self, z: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
        let mut a = z.dot(&self.w1().t());
        for mut row in a.rows_mut() {
            for (v, b) in row.iter_mut().zip(&self.weights.b1) {
                *v = (*v + b).tanh();
            }
        }
        let w2 = ArrayView1::from(&self.weights.w2);
        let mut out = a.dot(&w2) + self.weights.b2;
        if self.output == Output::Logistic {
            out.mapv_inplace(sigmoid);
        }
        (a, out)
    }

    fn check_rows(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.inputs() {
            return Err(Error::Dimension {
                expected: self.inputs(),
                got: x.ncols(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mapping input".into()));
        }
        Ok(())
    }

    /// Outputs for raw (unstandardized) rows.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_rows(x)?;
        Ok(self.forward(self.standardization.apply(x).view()).1)
    }

    /// Probability of "recognized" for one raw input vector.
    pub fn predict_prob(&self, x: &[f64]) -> Result<f64> {
        let row = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
        Ok(self.predict(row)?[0])
    }

    /// Binary decision; a probability of exactly 0.5 counts as recognized.
    pub fn classify(&self, x: &[f64]) -> Result<bool> {
        Ok(self.predict_prob(x)? >= 0.5)
    }

    /// Mean loss on raw rows under the model's own cost function.
    pub fn loss(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
        self.check_rows(x)?;
        Ok(self.loss_grad(self.standardization.apply(x).view(), y, false).0)
    }

    /// Gradient of [`MlpModel::loss`] with respect to [`MlpModel::params`].
    pub fn gradient(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Vec<f64>> {
        self.check_rows(x)?;
        Ok(self.loss_grad(self.standardization.apply(x).view(), y, true).1)
    }

    fn loss_grad(&self, z: ArrayView2<f64>, y: ArrayView1<f64>, want_grad: bool) -> (f64, Vec<f64>) {
        let n = z.nrows() as f64;
        let (a, out) = self.forward(z);
        let loss = match self.output {
            Output::Logistic => {
                out.iter()
                    .zip(y)
                    .map(|(&p, &t)| {
                        let p = p.clamp(1e-15, 1.0 - 1e-15);
                        -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                    })
                    .sum::<f64>()
                    / n
            }
            Output::Linear => out.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n,
        };
        if !want_grad {
            return (loss, Vec::new());
        }
        // dL/d(pre-output): (p − t)/n for logistic + cross-entropy, 2(o − t)/n for MSE
        let scale = match self.output {
            Output::Logistic => 1.0 / n,
            Output::Linear => 2.0 / n,
        };
        let delta: Array1<f64> = (&out - &y) * scale;
        let gw2 = a.t().dot(&delta);
        let gb2 = delta.sum();
        let mut dh = Array2::zeros(a.raw_dim());
        for (j, w) in self.weights.w2.iter().enumerate() {
            let mut col = dh.column_mut(j);
            for ((g, &d), &h) in col.iter_mut().zip(&delta).zip(a.column(j)) {
                *g = d * w * (1.0 - h * h);
            }
        }
        let gw1 = dh.t().dot(&z);
        let gb1 = dh.sum_axis(Axis(0));
        let mut g: Vec<f64> = gw1.iter().copied().collect();
        g.extend(gb1.iter());
        g.extend(gw2.iter());
        g.push(gb2);
        (loss, g)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = io::read_json(path.as_ref())?;
        m.validate()?;
        Ok(m)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub step: f64,
    pub momentum: f64,
    /// Step growth after an epoch that lowered the training loss.
    pub step_growth: f64,
    /// Share of the data held out for early stopping when no explicit
    /// validation set is given.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            patience: 20,
            step: 0.01,
            momentum: 0.9,
            step_growth: 1.05,
            validation_fraction: 15.0 / 85.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub final_valid_loss: f64,
}

/// Rows and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mapping data".into()));
        }
        Ok(Self { x, y })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("ragged mapping input"));
        }
        let x = Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j]);
        Self::new(x, Array1::from(y.to_vec()))
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), idx),
            y: self.y.select(Axis(0), idx),
        }
    }
}

fn check_labels(d: &Dataset) -> Result<()> {
    if d.y.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::invalid("classifier labels must be 0 or 1"));
    }
    let pos = d.y.iter().filter(|&&t| t == 1.0).count();
    if pos == 0 || pos == d.len() {
        return Err(Error::InsufficientData("classifier data contain a single class".into()));
    }
    Ok(())
}

fn init(inputs: usize, output: Output, seed: u64) -> MlpModel {
    let mut m = MlpModel::zeros(inputs, output);
    let mut r = rng(&[seed, 0x4d4c_50]);
    let a1 = (6.0 / (inputs + HIDDEN_UNITS) as f64).sqrt();
    let a2 = (6.0 / (HIDDEN_UNITS + 1) as f64).sqrt();
    let mut p: Vec<f64> = (0..HIDDEN_UNITS * inputs).map(|_| r.random_range(-a1..a1)).collect();
    p.extend(std::iter::repeat_n(0.0, HIDDEN_UNITS));
    p.extend((0..HIDDEN_UNITS).map(|_| r.random_range(-a2..a2)));
    p.push(0.0);
    m.set_params(&p);
    m
}

/// Full-batch momentum descent with early stopping on `valid`.
///
/// The step halves (and the epoch is undone) whenever the training loss
/// rises, and grows by `step_growth` otherwise.
pub fn fit(train: &Dataset, valid: &Dataset, output: Output, config: &TrainConfig, seed: u64) -> Result<(MlpModel, TrainReport)> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::InsufficientData("empty training or validation set".into()));
    }
    if train.x.ncols() != valid.x.ncols() {
        return Err(Error::Dimension {
            expected: train.x.ncols(),
            got: valid.x.ncols(),
        });
    }
    let mut model = init(train.x.ncols(), output, seed);
    model.standardization = Standardization::fit(train.x.view());
    let zt = model.standardization.apply(train.x.view());
    let zv = model.standardization.apply(valid.x.view());

    let mut params = model.params();
    let mut velocity = vec![0.0; params.len()];
    let mut step = config.step;
    let (mut loss, mut grad) = model.loss_grad(zt.view(), train.y.view(), true);
    let mut best = (model.loss_grad(zv.view(), valid.y.view(), false).0, params.clone(), 0);
    let mut valid_loss = best.0;
    let mut since_best = 0;
    let mut epochs = 0;
    while epochs < config.max_epochs && since_best < config.patience {
        epochs += 1;
        let trial: Vec<f64> = params
            .iter()
            .zip(velocity.iter_mut())
            .zip(&grad)
            .map(|((p, v), g)| {
                *v = config.momentum * *v - step * g;
                p + *v
            })
            .collect();
        model.set_params(&trial);
        let (l, g) = model.loss_grad(zt.view(), train.y.view(), true);
        if !l.is_finite() {
            return Err(Error::Diverged(format!("non-finite training loss at epoch {epochs}")));
        }
        if l > loss {
            step *= 0.5;
            velocity.iter_mut().for_each(|v| *v = 0.0);
            model.set_params(&params);
        } else {
            step *= config.step_growth;
            params = trial;
            loss = l;
            grad = g;
        }
        valid_loss = model.loss_grad(zv.view(), valid.y.view(), false).0;
        if valid_loss < best.0 {
            best = (valid_loss, params.clone(), epochs);
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    model.set_params(&best.1);
    let report = TrainReport {
        epochs,
        best_epoch: best.2,
        best_valid_loss: best.0,
        final_valid_loss: valid_loss,
    };
    Ok((model, report))
}

/// Seeded split of `0..n` into training and validation indices.
fn holdout(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(&[seed, 0x5641_4c]));
    let nv = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let valid = idx.split_off(n - nv);
    (idx, valid)
}

/// Classifier of keyword correctness; the validation set is drawn from `data`.
pub fn train_classifier(data: &Dataset, config: &TrainConfig, seed: u64) -> Result<(MlpModel, TrainReport)> {
    check_labels(data)?;
    if data.len() < 4 {
        return Err(Error::InsufficientData(format!("{} classifier records", data.len())));
    }
    let (t, v) = holdout(data.len(), config.validation_fraction, seed);
    fit(&data.select(&t), &data.select(&v), Output::Logistic, config, seed)
}

/// Classifier with an explicit validation set.
pub fn fit_classifier(train: &Dataset, valid: &Dataset, config: &TrainConfig, seed: u64) -> Result<(MlpModel, TrainReport)> {
    check_labels(train)?;
    fit(train, valid, Output::Logistic, config, seed)
}

pub const MIN_REGRESSION_POINTS: usize = 20;

/// Regressor of word-correct score from averaged measures.
pub fn train_regressor(data: &Dataset, config: &TrainConfig, seed: u64) -> Result<(MlpModel, TrainReport)> {
    if data.len() < MIN_REGRESSION_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} regression points, need {MIN_REGRESSION_POINTS}",
            data.len()
        )));
    }
    let (t, v) = holdout(data.len(), config.validation_fraction, seed);
    fit(&data.select(&t), &data.select(&v), Output::Linear, config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn line(n: usize, f: impl Fn(f64) -> f64) -> Dataset {
        let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| f(x[0])).collect();
        Dataset::from_rows(&xs, &ys).unwrap()
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = MlpModel::zeros(2, Output::Logistic);
        assert_eq!(m.predict_prob(&[0.0, 0.0]).unwrap(), 0.5);
        assert!(m.classify(&[0.0, 0.0]).unwrap());
        assert!(matches!(m.predict_prob(&[1.0]), Err(Error::Dimension { .. })));
        assert!(m.predict_prob(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn monotone_model_is_monotone() {
        let mut m = MlpModel::zeros(1, Output::Logistic);
        let p: Vec<f64> = (0..HIDDEN_UNITS * 3 + 1).map(|i| 0.1 + 0.05 * (i % 7) as f64).collect();
        m.set_params(&p);
        let mut prev = 0.0;
        for i in -100..=100 {
            let v = m.predict_prob(&[i as f64 / 10.0]).unwrap();
            assert!((0.0..=1.0).contains(&v) && v > prev);
            prev = v;
        }
    }

    #[test]
    fn separable_data() {
        let xs: Vec<Vec<f64>> = (0..400)
            .map(|i| {
                let u = (i as f64 * 0.618_034) % 1.0;
                vec![if i % 2 == 0 { 0.5 + 2.0 * u } else { -0.5 - 2.0 * u }]
            })
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| f64::from(u8::from(x[0] > 0.0))).collect();
        let data = Dataset::from_rows(&xs, &ys).unwrap();
        let (m, _) = train_classifier(&data.select(&(0..300).collect::<Vec<_>>()), &TrainConfig::default(), 3).unwrap();
        let hits = (300..400).filter(|&i| m.classify(&xs[i]).unwrap() == (ys[i] == 1.0)).count();
        assert!(hits >= 99, "{hits}");
    }

    #[test]
    fn identity_and_constant_regression() {
        let (m, _) = train_regressor(&line(200, |x| x), &TrainConfig::default(), 1).unwrap();
        let test = line(57, |x| x);
        let p = m.predict(test.x.view()).unwrap();
        let rmse = ((&p - &test.y).mapv(|e| e * e).sum() / test.len() as f64).sqrt();
        assert!(rmse <= 0.02, "{rmse}");
        let (m, _) = train_regressor(&line(100, |_| 0.37), &TrainConfig::default(), 1).unwrap();
        for x in [0.0, 0.3, 1.0] {
            assert!((m.predict_prob(&[x]).unwrap() - 0.37).abs() < 0.01);
        }
        assert!(train_regressor(&line(19, |x| x), &TrainConfig::default(), 1).is_err());
    }

    #[test]
    fn rejects_single_class() {
        let d = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]], &[1.0; 4]).unwrap();
        assert!(matches!(
            train_classifier(&d, &TrainConfig::default(), 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = array![[0.3, -1.2], [1.5, 0.2], [-0.7, 0.9], [0.1, 0.1], [2.0, -0.4]];
        for output in [Output::Logistic, Output::Linear] {
            let y = array![1.0, 0.0, 1.0, 1.0, 0.0];
            let m = init(2, output, 9);
            let g = m.gradient(x.view(), y.view()).unwrap();
            let p = m.params();
            for k in 0..p.len() {
                let h = 1e-6;
                let mut q = p.clone();
                let mut n = m.clone();
                q[k] += h;
                n.set_params(&q);
                let up = n.loss(x.view(), y.view()).unwrap();
                q[k] -= 2.0 * h;
                n.set_params(&q);
                let down = n.loss(x.view(), y.view()).unwrap();
                let fd = (up - down) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()), "{output:?} {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn early_stopping_and_determinism() {
        let d = line(120, |x| f64::from(u8::from((x * 37.0).sin() > 0.0)));
        let (a, ra) = train_classifier(&d, &TrainConfig::default(), 4).unwrap();
        let (b, rb) = train_classifier(&d, &TrainConfig::default(), 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.best_valid_loss <= ra.final_valid_loss);
        assert!(ra.epochs <= 500);
    }

    #[test]
    fn json_round_trip() {
        let (m, _) = train_regressor(&line(40, |x| x * x), &TrainConfig::default(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(MlpModel::load(&p).unwrap(), m);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"schema_version\": 1") && text.contains("\"activation\": \"tanh\""));
    }

    #[test]
    fn standardization_absorbs_affine_rescaling() {
        let d = line(150, |x| f64::from(u8::from(x > 0.4)));
        let mut scaled = d.clone();
        scaled.x.mapv_inplace(|v| 250.0 * v - 40.0);
        let (a, _) = train_classifier(&d, &TrainConfig::default(), 8).unwrap();
        let (b, _) = train_classifier(&scaled, &TrainConfig::default(), 8).unwrap();
        for i in 0..30 {
            let x = i as f64 / 29.0;
            let pa = a.predict_prob(&[x]).unwrap();
            let pb = b.predict_prob(&[250.0 * x - 40.0]).unwrap();
            assert!((pa - pb).abs() < 1e-6);
        }
    }
}
