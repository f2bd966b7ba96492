//! Linear classifiers on frozen embeddings: an L2-regularized hinge-loss
//! SVM (dual coordinate descent, Platt-calibrated) and L2-regularized
//! logistic regression (L-BFGS).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training_set, FoldPlan, FoldScore, HeadError, Prediction, TrainReport};
use crate::corpus::Label;
use crate::encoder::Embedding;
use crate::eval::{confusion, weighted_metrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SvmMode {
    #[default]
    Svm,
    Logreg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub mode: SvmMode,
    pub max_iter: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { c: 1.0, mode: SvmMode::Svm, max_iter: 1000, tolerance: 1e-3, seed: 0 }
    }
}

fn sign(label: Label) -> f64 {
    match label {
        Label::Offensive => 1.0,
        Label::NotOffensive => -1.0,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `w·x + b`; positive means OFFENSIVE.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

/// Dual coordinate descent for `min ½‖w̄‖² + C Σ max(0, 1 − yᵢ w̄·x̄ᵢ)` where
/// `x̄ = [x, 1]`, so the bias is regularized like any other weight.
fn fit_hinge(xs: &[&[f64]], ys: &[f64], config: &SvmConfig) -> LinearModel {
    let d = xs.first().map_or(0, |x| x.len());
    let mut w = vec![0.0; d + 1];
    let mut alpha = vec![0.0; xs.len()];
    let q: Vec<f64> = xs.iter().map(|x| dot(x, x) + 1.0).collect();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config.c;
    for _ in 0..config.max_iter {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let x = xs[i];
            let g = ys[i] * (dot(&w[..d], x) + w[d]) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / q[i]).clamp(0.0, c);
                let step = (alpha[i] - old) * ys[i];
                for (wj, xj) in w[..d].iter_mut().zip(x) {
                    *wj += step * xj;
                }
                w[d] += step;
            }
        }
        if pg_max - pg_min < config.tolerance {
            break;
        }
    }
    let bias = w.pop().unwrap_or(0.0);
    LinearModel { weights: w, bias }
}

/// Objective and gradient of `½‖w‖² + C Σ log(1 + exp(−yᵢ(w·xᵢ + b)))`,
/// with the bias unregularized. `theta = [w, b]`.
fn logistic_objective(theta: &[f64], xs: &[&[f64]], ys: &[f64], c: f64, grad: &mut [f64]) -> f64 {
    let d = theta.len() - 1;
    let (w, b) = (&theta[..d], theta[d]);
    let mut f = 0.5 * dot(w, w);
    grad[..d].copy_from_slice(w);
    grad[d] = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let margin = y * (dot(w, x) + b);
        // log(1 + e^{-m}) computed stably
        f += c * if margin > 0.0 { (-margin).exp().ln_1p() } else { -margin + margin.exp().ln_1p() };
        let coef = -c * y * sigmoid(-margin);
        for (gj, xj) in grad[..d].iter_mut().zip(x.iter()) {
            *gj += coef * xj;
        }
        grad[d] += coef;
    }
    f
}

/// Limited-memory BFGS with a backtracking Armijo line search.
fn lbfgs<F>(mut theta: Vec<f64>, mut objective: F, max_iter: usize, tolerance: f64) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    const MEMORY: usize = 10;
    let n = theta.len();
    let mut grad = vec![0.0; n];
    let mut f = objective(&theta, &mut grad);
    let mut history: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut next_grad = vec![0.0; n];
    for _ in 0..max_iter {
        let gnorm = dot(&grad, &grad).sqrt();
        if gnorm <= tolerance * f.abs().max(1.0) {
            break;
        }
        // two-loop recursion
        let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &dir);
            for (dj, yj) in dir.iter_mut().zip(y) {
                *dj -= a * yj;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.last() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|dj| *dj *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &dir);
            for (dj, sj) in dir.iter_mut().zip(s) {
                *dj += (a - b) * sj;
            }
        }
        let mut slope = dot(&grad, &dir);
        if slope >= 0.0 {
            dir = grad.iter().map(|g| -g).collect();
            slope = -dot(&grad, &grad);
            history.clear();
        }
        let mut step = if history.is_empty() { 1.0 / gnorm.max(1.0) } else { 1.0 };
        let mut candidate = vec![0.0; n];
        let mut accepted = false;
        for _ in 0..50 {
            for j in 0..n {
                candidate[j] = theta[j] + step * dir[j];
            }
            let f_new = objective(&candidate, &mut next_grad);
            if f_new <= f + 1e-4 * step * slope {
                let s: Vec<f64> = (0..n).map(|j| candidate[j] - theta[j]).collect();
                let y: Vec<f64> = (0..n).map(|j| next_grad[j] - grad[j]).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 {
                    history.push((s, y, 1.0 / sy));
                    if history.len() > MEMORY {
                        history.remove(0);
                    }
                }
                std::mem::swap(&mut theta, &mut candidate);
                std::mem::swap(&mut grad, &mut next_grad);
                f = f_new;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    theta
}

fn fit_logistic(xs: &[&[f64]], ys: &[f64], config: &SvmConfig) -> LinearModel {
    let d = xs.first().map_or(0, |x| x.len());
    let theta = lbfgs(
        vec![0.0; d + 1],
        |theta, grad| logistic_objective(theta, xs, ys, config.c, grad),
        config.max_iter,
        1e-8,
    );
    LinearModel { weights: theta[..d].to_vec(), bias: theta[d] }
}

/// Platt sigmoid `P(OFFENSIVE | f) = 1 / (1 + exp(A f))` with the intercept
/// pinned at zero, so the calibrated label always agrees with the sign of
/// the margin. `A` is fitted by Newton's method on prior-smoothed targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattScaling {
    pub a: f64,
}

/// Largest slope kept; a non-negative slope would invert the margin.
const MAX_SLOPE: f64 = -1e-6;

impl PlattScaling {
    pub fn fit(decisions: &[f64], ys: &[f64]) -> PlattScaling {
        let prior1 = ys.iter().filter(|&&y| y > 0.0).count() as f64;
        let prior0 = ys.len() as f64 - prior1;
        let hi = (prior1 + 1.0) / (prior1 + 2.0);
        let lo = 1.0 / (prior0 + 2.0);
        let t: Vec<f64> = ys.iter().map(|&y| if y > 0.0 { hi } else { lo }).collect();
        let objective = |a: f64| -> f64 {
            decisions
                .iter()
                .zip(&t)
                .map(|(&f, &ti)| {
                    let fa = f * a;
                    if fa >= 0.0 {
                        ti * fa + (-fa).exp().ln_1p()
                    } else {
                        (ti - 1.0) * fa + fa.exp().ln_1p()
                    }
                })
                .sum()
        };
        let mut a = -1.0;
        let mut fval = objective(a);
        for _ in 0..100 {
            let (mut h, mut g) = (1e-12, 0.0);
            for (&f, &ti) in decisions.iter().zip(&t) {
                let p = sigmoid(-f * a);
                h += f * f * p * (1.0 - p);
                g += f * (ti - p);
            }
            if g.abs() < 1e-9 {
                break;
            }
            let da = -g / h;
            let mut step = 1.0;
            while step >= 1e-10 {
                let na = a + step * da;
                let nf = objective(na);
                if nf < fval + 1e-4 * step * g * da {
                    a = na;
                    fval = nf;
                    break;
                }
                step /= 2.0;
            }
            if step < 1e-10 {
                break;
            }
        }
        PlattScaling { a: a.min(MAX_SLOPE) }
    }

    pub fn offensive_probability(&self, decision: f64) -> f64 {
        sigmoid(-self.a * decision)
    }
}

/// A fitted linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmHead {
    pub config: SvmConfig,
    pub model: LinearModel,
    /// Present in `Svm` mode; logistic regression is already probabilistic.
    pub calibration: Option<PlattScaling>,
}

impl SvmHead {
    pub fn input_dim(&self) -> usize {
        self.model.weights.len()
    }

    pub fn offensive_probability(&self, x: &[f64]) -> f64 {
        let f = self.model.decision(x);
        match (self.config.mode, self.calibration) {
            (SvmMode::Svm, Some(platt)) => platt.offensive_probability(f),
            _ => sigmoid(f),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Prediction {
        Prediction::from_offensive_probability(self.offensive_probability(x))
    }
}

fn fit(xs: &[&[f64]], ys: &[f64], config: &SvmConfig) -> LinearModel {
    match config.mode {
        SvmMode::Svm => fit_hinge(xs, ys, config),
        SvmMode::Logreg => fit_logistic(xs, ys, config),
    }
}

/// Fits one linear model on every example, without cross-validation or
/// calibration.
pub fn fit_linear(embeddings: &[Embedding], labels: &[Label], config: &SvmConfig) -> Result<LinearModel, HeadError> {
    check_training_set(embeddings, labels)?;
    if !(config.c > 0.0 && config.c.is_finite()) {
        return Err(HeadError::InvalidConfig(format!("c must be positive (got {})", config.c)));
    }
    let xs: Vec<Vec<f64>> = embeddings.iter().map(Embedding::to_f64).collect();
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let ys: Vec<f64> = labels.iter().copied().map(sign).collect();
    Ok(fit(&refs, &ys, config))
}

/// Cross-validates over `folds` for a diagnostic per-fold weighted F1, then
/// fits the final model on all examples. In `Svm` mode the out-of-fold
/// decision values calibrate the Platt sigmoid.
pub fn fit_svm(
    embeddings: &[Embedding],
    labels: &[Label],
    config: &SvmConfig,
    folds: &FoldPlan,
) -> Result<(SvmHead, TrainReport), HeadError> {
    check_training_set(embeddings, labels)?;
    if !(config.c > 0.0 && config.c.is_finite()) {
        return Err(HeadError::InvalidConfig(format!("c must be positive (got {})", config.c)));
    }
    if folds.n() != labels.len() {
        return Err(HeadError::InvalidConfig(format!("fold plan covers {} of {} examples", folds.n(), labels.len())));
    }
    let data: Vec<Vec<f64>> = embeddings.iter().map(Embedding::to_f64).collect();
    let ys: Vec<f64> = labels.iter().copied().map(sign).collect();

    let mut out_of_fold = vec![0.0; data.len()];
    let mut fold_scores = Vec::with_capacity(folds.k());
    for fold in 0..folds.k() {
        let train = folds.training(fold);
        let held = folds.held_out(fold);
        let xs: Vec<&[f64]> = train.iter().map(|&i| data[i].as_slice()).collect();
        let fold_ys: Vec<f64> = train.iter().map(|&i| ys[i]).collect();
        let model = fit(&xs, &fold_ys, config);
        let mut preds = Vec::with_capacity(held.len());
        for &i in &held {
            let f = model.decision(&data[i]);
            out_of_fold[i] = f;
            preds.push(if f >= 0.0 { Label::Offensive } else { Label::NotOffensive });
        }
        let golds: Vec<Label> = held.iter().map(|&i| labels[i]).collect();
        let weighted_f1 = weighted_metrics(&confusion(&golds, &preds)?)?.weighted_f1;
        fold_scores.push(FoldScore { fold, n: held.len(), weighted_f1 });
    }

    let xs: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    let model = fit(&xs, &ys, config);
    let calibration = (config.mode == SvmMode::Svm).then(|| PlattScaling::fit(&out_of_fold, &ys));
    let report = TrainReport { folds: fold_scores, ..TrainReport::default() };
    Ok((SvmHead { config: config.clone(), model, calibration }, report))
}
