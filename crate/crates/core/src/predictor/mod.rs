//! MLP regression of (TM, GS, CM) from surface features, optionally
//! extended with training signals.

mod format;
mod mlp;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{FeatureVector, N_FEATURES};
use crate::metrics::{Metric, Metrics};
use crate::signals::{N_SIGNALS, TrainingSignals};
use crate::stats::pearson;

use mlp::{Adam, Network};

pub const N_OUTPUTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputMode {
    Features,
    FeaturesSignals,
}

impl InputMode {
    pub fn dim(self) -> usize {
        match self {
            InputMode::Features => N_FEATURES,
            InputMode::FeaturesSignals => N_FEATURES + N_SIGNALS,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            InputMode::Features => 0,
            InputMode::FeaturesSignals => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(InputMode::Features),
            1 => Some(InputMode::FeaturesSignals),
            _ => None,
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputMode::Features => "features",
            InputMode::FeaturesSignals => "features+signals",
        })
    }
}

impl FromStr for InputMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "features" => Ok(InputMode::Features),
            "features+signals" => Ok(InputMode::FeaturesSignals),
            o => Err(format!("unknown input mode {o:?}")),
        }
    }
}

/// Builds one input row, or `None` if any required value is null.
pub fn input_row(features: &FeatureVector, signals: Option<&TrainingSignals>, mode: InputMode) -> Option<Vec<f64>> {
    let mut row: Vec<f64> = features.options().into_iter().collect::<Option<_>>()?;
    if mode == InputMode::FeaturesSignals {
        let s = signals?;
        for v in s.to_array() {
            row.push(v?);
        }
    }
    Some(row)
}

/// Per-input z-scoring; zero-variance inputs pass through with scale 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 && s.is_finite() { s } else { 1.0 }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty on weights.
    pub alpha: f64,
    pub max_batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub standardize: bool,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![100, 100],
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            alpha: 1e-4,
            max_batch: 200,
            epochs: 20,
            seed: 0,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub input_mode: InputMode,
    pub standardizer: Standardizer,
    pub seed: u64,
    pub corpus_hash: String,
    pub(crate) net: Network,
}

impl MlpModel {
    pub fn dims(&self) -> Vec<usize> {
        self.net.dims()
    }

    /// Raw network output for one unstandardized row.
    pub fn forward(&self, row: &[f64]) -> [f64; N_OUTPUTS] {
        let out = self.net.forward(&self.standardizer.transform(row));
        [out[0], out[1], out[2]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Full-data loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

fn check_rows(rows: &[Vec<f64>], d: usize) -> Result<()> {
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    let non_finite: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.iter().any(|x| !x.is_finite()))
        .map(|(i, _)| i)
        .collect();
    if non_finite.is_empty() {
        Ok(())
    } else {
        Err(Error::NonFiniteInputs(non_finite))
    }
}

fn full_loss(net: &Network, xs: &[Vec<f64>], ys: &[[f64; N_OUTPUTS]], alpha: f64) -> f64 {
    let xr: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let yr: Vec<&[f64]> = ys.iter().map(|y| y.as_slice()).collect();
    net.loss(&xr, &yr, alpha)
}

/// Fits the network with mini-batch Adam for exactly `config.epochs`
/// epochs. Deterministic given the seed.
pub fn train_mlp(
    inputs: &[Vec<f64>],
    targets: &[[f64; N_OUTPUTS]],
    mode: InputMode,
    config: &MlpConfig,
    corpus_hash: &str,
) -> Result<(MlpModel, TrainReport)> {
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            found: targets.len(),
        });
    }
    if inputs.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 training rows, got {}",
            inputs.len()
        )));
    }
    let d = mode.dim();
    check_rows(inputs, d)?;
    let bad_targets: Vec<usize> = targets
        .iter()
        .enumerate()
        .filter(|(_, t)| t.iter().any(|x| !x.is_finite()))
        .map(|(i, _)| i)
        .collect();
    if !bad_targets.is_empty() {
        return Err(Error::NonFiniteInputs(bad_targets));
    }

    let standardizer = if config.standardize {
        Standardizer::fit(inputs)
    } else {
        Standardizer::identity(d)
    };
    let xs: Vec<Vec<f64>> = inputs.iter().map(|r| standardizer.transform(r)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dims = vec![d];
    dims.extend(&config.hidden);
    dims.push(N_OUTPUTS);
    let mut net = Network::glorot(&dims, &mut rng);
    let mut adam = Adam::new(net.n_params(), config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let batch = config.max_batch.min(xs.len()).max(1);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let xb: Vec<&[f64]> = chunk.iter().map(|&i| xs[i].as_slice()).collect();
            let yb: Vec<&[f64]> = chunk.iter().map(|&i| targets[i].as_slice()).collect();
            let (_, grad) = net.loss_and_grad(&xb, &yb, config.alpha);
            adam.step(&mut net, &grad);
        }
        epoch_losses.push(full_loss(&net, &xs, targets, config.alpha));
    }
    Ok((
        MlpModel {
            input_mode: mode,
            standardizer,
            seed: config.seed,
            corpus_hash: corpus_hash.to_owned(),
            net,
        },
        TrainReport { epoch_losses },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub raw: [f64; N_OUTPUTS],
    /// Clamped into `[0, 1]` with CM recomputed as `max(0, tm - gs)`.
    pub metrics: Metrics,
    pub clamped: bool,
}

impl Prediction {
    fn from_raw(raw: [f64; N_OUTPUTS]) -> Self {
        let tm = raw[0].clamp(0.0, 1.0);
        let gs = raw[1].clamp(0.0, 1.0);
        let metrics = Metrics::new(tm, gs);
        let clamped = tm != raw[0] || gs != raw[1] || metrics.cm != raw[2];
        Self { raw, metrics, clamped }
    }
}

pub fn predict(model: &MlpModel, inputs: &[Vec<f64>]) -> Result<Vec<Prediction>> {
    check_rows(inputs, model.input_mode.dim())?;
    Ok(inputs
        .par_iter()
        .map(|r| Prediction::from_raw(model.forward(r)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricEvaluation {
    pub metric: Metric,
    /// `None` when either side has zero variance.
    pub pearson_r: Option<f64>,
    pub mean_abs_diff: f64,
}

/// Pearson r and mean absolute difference of raw outputs against targets,
/// per metric. Works across corpora: the rows may come from a different
/// language pair than the training rows.
pub fn evaluate_predictor(
    model: &MlpModel,
    inputs: &[Vec<f64>],
    targets: &[[f64; N_OUTPUTS]],
) -> Result<[MetricEvaluation; N_OUTPUTS]> {
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            found: targets.len(),
        });
    }
    if inputs.len() < 3 {
        return Err(Error::InvalidArgument("need at least 3 evaluation rows".into()));
    }
    let preds = predict(model, inputs)?;
    let raw: Vec<[f64; N_OUTPUTS]> = preds.iter().map(|p| p.raw).collect();
    Ok(evaluate_outputs(&raw, targets))
}

/// Scores arbitrary prediction rows against targets.
pub fn evaluate_outputs(preds: &[[f64; N_OUTPUTS]], targets: &[[f64; N_OUTPUTS]]) -> [MetricEvaluation; N_OUTPUTS] {
    std::array::from_fn(|k| {
        let p: Vec<f64> = preds.iter().map(|r| r[k]).collect();
        let t: Vec<f64> = targets.iter().map(|r| r[k]).collect();
        let mae = p.iter().zip(&t).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len().max(1) as f64;
        MetricEvaluation {
            metric: Metric::ALL[k],
            pearson_r: pearson(&p, &t).ok(),
            mean_abs_diff: mae,
        }
    })
}

/// Relative error `||g_a - g_n|| / (||g_a|| + ||g_n||)` between analytic
/// gradients and central differences with step `h`, on standardized rows.
pub fn gradient_check(model: &MlpModel, inputs: &[Vec<f64>], targets: &[[f64; N_OUTPUTS]], alpha: f64, h: f64) -> f64 {
    let xs: Vec<Vec<f64>> = inputs.iter().map(|r| model.standardizer.transform(r)).collect();
    let xr: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let yr: Vec<&[f64]> = targets.iter().map(|y| y.as_slice()).collect();
    let (_, grad) = model.net.loss_and_grad(&xr, &yr, alpha);
    let mut probe = model.net.clone();
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (i, &a) in grad.params().enumerate() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + h;
        let lp = probe.loss(&xr, &yr, alpha);
        *probe.param_mut(i) = orig - h;
        let lm = probe.loss(&xr, &yr, alpha);
        *probe.param_mut(i) = orig;
        let n = (lp - lm) / (2.0 * h);
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    let denom = na.sqrt() + nn.sqrt();
    if denom == 0.0 { 0.0 } else { diff.sqrt() / denom }
}
