//! Dense classifier over frozen embeddings.
//!
//! Architecture: `input → [dense(w) → batch-norm → ReLU → dropout] per width
//! → dense(2) → softmax`, trained with Adam on mean cross-entropy. Gradients
//! are derived by hand; `tests::analytic_gradients_match_finite_differences`
//! pins them against central differences.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_training_set, EpochLoss, HeadError, Prediction, TrainReport};
use crate::corpus::Label;
use crate::encoder::Embedding;
use crate::eval::{confusion, weighted_metrics};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub layer_widths: Vec<usize>,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            layer_widths: vec![256, 64],
            dropout_rate: 0.3,
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), HeadError> {
        let bad = |msg: String| Err(HeadError::InvalidConfig(msg));
        if self.layer_widths.contains(&0) {
            return bad(format!("layer widths must be positive: {:?}", self.layer_widths));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout must lie in [0, 1): {}", self.dropout_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 for batch normalization".into());
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad(format!("learning rate must be positive: {}", self.learning_rate));
        }
        Ok(())
    }
}

/// Trainable parameters. Gradients and Adam moments share this shape.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Params {
    pub(crate) weights: Vec<Array2<f64>>,
    pub(crate) gammas: Vec<Array1<f64>>,
    pub(crate) betas: Vec<Array1<f64>>,
    pub(crate) out_w: Array2<f64>,
    pub(crate) out_b: Array1<f64>,
}

impl Params {
    fn init(input_dim: usize, widths: &[usize], rng: &mut ChaCha8Rng) -> Params {
        let mut weights = Vec::new();
        let mut fan_in = input_dim;
        for &w in widths {
            let he = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            weights.push(Array2::from_shape_simple_fn((fan_in, w), || he.sample(rng)));
            fan_in = w;
        }
        let glorot = Normal::new(0.0, (2.0 / (fan_in + 2) as f64).sqrt()).unwrap();
        Params {
            gammas: widths.iter().map(|&w| Array1::ones(w)).collect(),
            betas: widths.iter().map(|&w| Array1::zeros(w)).collect(),
            weights,
            out_w: Array2::from_shape_simple_fn((fan_in, 2), || glorot.sample(rng)),
            out_b: Array1::zeros(2),
        }
    }

    fn zeros_like(&self) -> Params {
        Params {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            gammas: self.gammas.iter().map(|g| Array1::zeros(g.len())).collect(),
            betas: self.betas.iter().map(|b| Array1::zeros(b.len())).collect(),
            out_w: Array2::zeros(self.out_w.raw_dim()),
            out_b: Array1::zeros(2),
        }
    }

    /// Every parameter tensor as a flat slice, in a fixed order.
    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for i in 0..self.weights.len() {
            out.push(self.weights[i].as_slice().unwrap());
            out.push(self.gammas[i].as_slice().unwrap());
            out.push(self.betas[i].as_slice().unwrap());
        }
        out.push(self.out_w.as_slice().unwrap());
        out.push(self.out_b.as_slice().unwrap());
        out
    }

    pub(crate) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for ((w, g), b) in self.weights.iter_mut().zip(self.gammas.iter_mut()).zip(self.betas.iter_mut()) {
            out.push(w.as_slice_mut().unwrap());
            out.push(g.as_slice_mut().unwrap());
            out.push(b.as_slice_mut().unwrap());
        }
        out.push(self.out_w.as_slice_mut().unwrap());
        out.push(self.out_b.as_slice_mut().unwrap());
        out
    }
}

/// Per-layer intermediates kept for the backward pass.
struct LayerCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    pre_relu: Array2<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Mean cross-entropy, its gradient, and the batch statistics observed.
pub(crate) struct TrainStep {
    pub(crate) loss: f64,
    pub(crate) grads: Params,
    batch_stats: Vec<(Array1<f64>, Array1<f64>)>,
}

/// Training-mode forward and backward pass. `masks[l]` is the already
/// scaled dropout multiplier for hidden layer `l` (0 or 1/(1−p)).
pub(crate) fn train_step(params: &Params, x: ArrayView2<f64>, targets: &[usize], masks: &[Array2<f64>]) -> TrainStep {
    let rows = x.nrows() as f64;
    let mut h = x.to_owned();
    let mut caches = Vec::with_capacity(params.weights.len());
    for (l, w) in params.weights.iter().enumerate() {
        let z = h.dot(w);
        let mean = z.mean_axis(Axis(0)).unwrap();
        let centered = &z - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = &centered * &inv_std;
        let y = &xhat * &params.gammas[l] + &params.betas[l];
        let a = y.mapv(|v| v.max(0.0));
        let next = &a * &masks[l];
        caches.push(LayerCache { input: h, xhat, inv_std, pre_relu: y, batch_mean: mean, batch_var: var });
        h = next;
    }
    let logits = h.dot(&params.out_w) + &params.out_b;
    let probs = softmax_rows(&logits);
    let loss = -targets.iter().enumerate().map(|(i, &t)| probs[[i, t]].max(1e-300).ln()).sum::<f64>() / rows;

    let mut grads = params.zeros_like();
    let mut dlogits = probs;
    for (i, &t) in targets.iter().enumerate() {
        dlogits[[i, t]] -= 1.0;
    }
    dlogits /= rows;
    grads.out_w = h.t().dot(&dlogits);
    grads.out_b = dlogits.sum_axis(Axis(0));
    let mut dh = dlogits.dot(&params.out_w.t());
    for l in (0..params.weights.len()).rev() {
        let c = &caches[l];
        let da = &dh * &masks[l];
        let dy = ndarray::Zip::from(&da).and(&c.pre_relu).map_collect(|&g, &y| if y > 0.0 { g } else { 0.0 });
        grads.gammas[l] = (&dy * &c.xhat).sum_axis(Axis(0));
        grads.betas[l] = dy.sum_axis(Axis(0));
        let dxhat = &dy * &params.gammas[l];
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
        let dz = (&dxhat * rows - &sum_dxhat - &c.xhat * &sum_dxhat_xhat) * &c.inv_std / rows;
        grads.weights[l] = c.input.t().dot(&dz);
        dh = dz.dot(&params.weights[l].t());
    }
    let batch_stats = caches.into_iter().map(|c| (c.batch_mean, c.batch_var)).collect();
    TrainStep { loss, grads, batch_stats }
}

/// A fitted dense head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    pub config: MlpConfig,
    pub(crate) input_dim: usize,
    pub(crate) params: Params,
    pub(crate) running_mean: Vec<Array1<f64>>,
    pub(crate) running_var: Vec<Array1<f64>>,
}

impl MlpHead {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Inference-mode class probabilities, one row per input row.
    fn probabilities(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for (l, w) in self.params.weights.iter().enumerate() {
            let z = h.dot(w);
            let inv_std = self.running_var[l].mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let y = (&z - &self.running_mean[l]) * &inv_std * &self.params.gammas[l] + &self.params.betas[l];
            h = y.mapv(|v| v.max(0.0));
        }
        softmax_rows(&(h.dot(&self.params.out_w) + &self.params.out_b))
    }

    fn mean_loss(&self, x: ArrayView2<f64>, targets: &[usize]) -> f64 {
        let probs = self.probabilities(x);
        -targets.iter().enumerate().map(|(i, &t)| probs[[i, t]].max(1e-300).ln()).sum::<f64>() / targets.len() as f64
    }

    pub fn predict(&self, x: &[f64]) -> Prediction {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let probs = self.probabilities(view);
        Prediction::from_offensive_probability(probs[[0, Label::Offensive.index()]])
    }

    pub fn predict_many(&self, xs: &Array2<f64>) -> Vec<Prediction> {
        self.probabilities(xs.view())
            .rows()
            .into_iter()
            .map(|row| Prediction::from_offensive_probability(row[Label::Offensive.index()]))
            .collect()
    }
}

struct Adam {
    m: Params,
    v: Params,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(params: &Params, lr: f64) -> Adam {
        Adam { m: params.zeros_like(), v: params.zeros_like(), t: 0, lr }
    }

    fn step(&mut self, params: &mut Params, grads: &Params) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        let lr = self.lr;
        for (((p, g), m), v) in
            params.slices_mut().into_iter().zip(grads.slices()).zip(self.m.slices_mut()).zip(self.v.slices_mut())
        {
            for j in 0..p.len() {
                m[j] = B1 * m[j] + (1.0 - B1) * g[j];
                v[j] = B2 * v[j] + (1.0 - B2) * g[j] * g[j];
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + EPS);
            }
        }
    }
}

fn to_matrix(embeddings: &[Embedding], idx: &[usize]) -> Array2<f64> {
    let d = embeddings.first().map_or(0, Embedding::dim);
    Array2::from_shape_fn((idx.len(), d), |(r, c)| embeddings[idx[r]].values()[c] as f64)
}

fn dropout_masks(widths: &[usize], rows: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<Array2<f64>> {
    let keep = 1.0 - rate;
    widths
        .iter()
        .map(|&w| Array2::from_shape_simple_fn((rows, w), || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }))
        .collect()
}

/// Splits off a seeded validation subset, trains for `config.epochs` epochs
/// and reports per-epoch training and validation loss.
pub fn fit_mlp(
    embeddings: &[Embedding],
    labels: &[Label],
    config: &MlpConfig,
    validation_fraction: f64,
) -> Result<(MlpHead, TrainReport), HeadError> {
    check_training_set(embeddings, labels)?;
    config.validate()?;
    if !(validation_fraction > 0.0 && validation_fraction <= 0.5) {
        return Err(HeadError::InvalidConfig(format!("validation fraction must lie in (0, 0.5]: {validation_fraction}")));
    }
    let n = labels.len();
    if n < 4 {
        return Err(HeadError::InvalidConfig(format!("{n} examples are too few to split and batch-normalize")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * validation_fraction).ceil() as usize).clamp(1, n - 2);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val_x = to_matrix(embeddings, val_idx);
    let val_t: Vec<usize> = val_idx.iter().map(|&i| labels[i].index()).collect();

    let input_dim = embeddings[0].dim();
    let mut head = MlpHead {
        config: config.clone(),
        input_dim,
        params: Params::init(input_dim, &config.layer_widths, &mut rng),
        running_mean: config.layer_widths.iter().map(|&w| Array1::zeros(w)).collect(),
        running_var: config.layer_widths.iter().map(|&w| Array1::ones(w)).collect(),
    };
    let mut adam = Adam::new(&head.params, config.learning_rate);
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut rng);
        let mut batches: Vec<&[usize]> = train_idx.chunks(config.batch_size).collect();
        // A trailing batch of one has zero batch variance; fold it into its neighbor.
        if batches.len() > 1 && batches.last().unwrap().len() == 1 {
            batches.pop();
            let k = batches.len() - 1;
            let start = k * config.batch_size;
            batches[k] = &train_idx[start..];
        }
        let mut total = 0.0;
        for batch in batches {
            let x = to_matrix(embeddings, batch);
            let targets: Vec<usize> = batch.iter().map(|&i| labels[i].index()).collect();
            let masks = dropout_masks(&config.layer_widths, batch.len(), config.dropout_rate, &mut rng);
            let step = train_step(&head.params, x.view(), &targets, &masks);
            adam.step(&mut head.params, &step.grads);
            let unbias = batch.len() as f64 / (batch.len() as f64 - 1.0);
            for (l, (mean, var)) in step.batch_stats.into_iter().enumerate() {
                head.running_mean[l] = &head.running_mean[l] * (1.0 - BN_MOMENTUM) + mean * BN_MOMENTUM;
                head.running_var[l] = &head.running_var[l] * (1.0 - BN_MOMENTUM) + var * (BN_MOMENTUM * unbias);
            }
            total += step.loss * batch.len() as f64;
        }
        let train_loss = total / train_idx.len() as f64;
        let validation_loss = head.mean_loss(val_x.view(), &val_t);
        epochs.push(EpochLoss { epoch, train_loss, validation_loss: Some(validation_loss) });
    }

    let preds: Vec<Label> = head.predict_many(&val_x).into_iter().map(|p| p.label).collect();
    let golds: Vec<Label> = val_idx.iter().map(|&i| labels[i]).collect();
    let validation_f1 = weighted_metrics(&confusion(&golds, &preds)?)?.weighted_f1;
    let report = TrainReport { epochs, validation_weighted_f1: Some(validation_f1), ..TrainReport::default() };
    Ok((head, report))
}
