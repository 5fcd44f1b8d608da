//! Softmax cross-entropy linear classifier trained with Adam, with l2
//! regularization ("ridge") or an l1 proximal step ("LASSO").

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, TrainConfig};
use super::accuracy;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    L1,
    L2,
}

/// Weight matrix (D x K), bias (K), and the regularization it was trained with.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub reg_kind: RegKind,
    pub reg_lambda: f64,
}

impl LinearModel {
    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights);
        z += &self.bias;
        z
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        argmax_rows(&self.logits(x))
    }
}

pub fn argmax_rows(z: &Array2<f64>) -> Vec<usize> {
    z.rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut p = z.clone();
    for mut row in p.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

fn validate_labels(y: &[usize], n_classes: usize) -> Result<()> {
    if y.is_empty() {
        return Err(Error::InsufficientData("empty label set".into()));
    }
    let mut seen = vec![false; n_classes];
    for &l in y {
        if l >= n_classes {
            return Err(Error::InvalidInput(format!("label {l} out of range 0..{n_classes}")));
        }
        seen[l] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::DegenerateLabels("training labels contain a single class".into()));
    }
    Ok(())
}

/// Mean softmax cross-entropy plus the l2 penalty term (weights only).
pub fn logistic_loss(
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    x: ArrayView2<f64>,
    y: &[usize],
    reg_kind: RegKind,
    lambda: f64,
) -> f64 {
    let mut z = x.dot(weights);
    z += bias;
    let p = softmax_rows(&z);
    let n = y.len() as f64;
    let ce: f64 = y.iter().enumerate().map(|(i, &l)| -(p[[i, l]].max(1e-300)).ln()).sum::<f64>() / n;
    match reg_kind {
        RegKind::L2 => ce + lambda * weights.iter().map(|w| w * w).sum::<f64>(),
        // the l1 term is handled by the proximal step, not the loss gradient
        RegKind::L1 => ce,
    }
}

/// Analytic gradient of `logistic_loss` (cross-entropy + differentiable
/// penalty) with respect to weights and bias.
pub fn logistic_grad(
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    x: ArrayView2<f64>,
    y: &[usize],
    reg_kind: RegKind,
    lambda: f64,
) -> (Array2<f64>, Array1<f64>) {
    let mut z = x.dot(weights);
    z += bias;
    let mut p = softmax_rows(&z);
    for (i, &l) in y.iter().enumerate() {
        p[[i, l]] -= 1.0;
    }
    let n = y.len() as f64;
    let mut gw = x.t().dot(&p) / n;
    if reg_kind == RegKind::L2 {
        gw += &(2.0 * lambda * weights);
    }
    let gb = p.sum_axis(Axis(0)) / n;
    (gw, gb)
}

/// Train a softmax linear classifier with mini-batch Adam. L1 regularization
/// is applied as a soft-threshold by lr*lambda after every optimizer step,
/// which produces exact zeros. Early stopping tracks validation accuracy and
/// restores the best snapshot.
pub fn train_logistic(
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    reg_kind: RegKind,
    lambda: f64,
    cfg: &TrainConfig,
    x_val: ArrayView2<f64>,
    y_val: &[usize],
) -> Result<LinearModel> {
    if x.nrows() != y.len() || x.nrows() < 2 {
        return Err(Error::InvalidInput("need matching X/y with at least 2 samples".into()));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite features".into()));
    }
    validate_labels(y, n_classes)?;
    let d = x.ncols();
    let mut model = LinearModel {
        weights: Array2::zeros((d, n_classes)),
        bias: Array1::zeros(n_classes),
        reg_kind,
        reg_lambda: lambda,
    };
    let n_params = d * n_classes + n_classes;
    let mut opt = Adam::new(n_params, cfg.adam.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..x.nrows()).collect();

    let mut best = (model.weights.clone(), model.bias.clone());
    let mut best_acc = f64::NEG_INFINITY;
    let mut stale = 0usize;

    for _epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (gw, gb) = logistic_grad(&model.weights, &model.bias, xb.view(), &yb, reg_kind, lambda);
            let mut params: Vec<f64> = model.weights.iter().chain(model.bias.iter()).copied().collect();
            let grads: Vec<f64> = gw.iter().chain(gb.iter()).copied().collect();
            opt.step(&mut params, &grads);
            if reg_kind == RegKind::L1 {
                let scales = opt.step_scales();
                for (w, s) in params[..d * n_classes].iter_mut().zip(&scales) {
                    let thr = s * lambda;
                    *w = if w.abs() <= thr { 0.0 } else { *w - thr * w.signum() };
                }
            }
            model.weights = Array2::from_shape_vec((d, n_classes), params[..d * n_classes].to_vec()).unwrap();
            model.bias = Array1::from_vec(params[d * n_classes..].to_vec());
        }
        let val_acc = accuracy(&model.predict(x_val), y_val);
        // ties refresh the snapshot (the later model is more regularized)
        // but still count toward patience
        if val_acc >= best_acc {
            best = (model.weights.clone(), model.bias.clone());
        }
        if val_acc > best_acc {
            best_acc = val_acc;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                break;
            }
        }
    }
    model.weights = best.0;
    model.bias = best.1;
    Ok(model)
}

/// Paper grid for the regularization factor.
pub const LAMBDA_GRID: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

/// Train one model per lambda, pick the best validation accuracy. Ties break
/// toward the larger lambda.
pub fn grid_search_lambda(
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    reg_kind: RegKind,
    grid: &[f64],
    cfg: &TrainConfig,
    x_val: ArrayView2<f64>,
    y_val: &[usize],
) -> Result<(f64, LinearModel)> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty lambda grid".into()));
    }
    let mut dedup: Vec<f64> = Vec::new();
    for &l in grid {
        if !dedup.contains(&l) {
            dedup.push(l);
        }
    }
    let mut best: Option<(f64, f64, LinearModel)> = None;
    for &lambda in &dedup {
        let model = train_logistic(x, y, n_classes, reg_kind, lambda, cfg, x_val, y_val)?;
        let acc = accuracy(&model.predict(x_val), y_val);
        let better = match &best {
            None => true,
            Some((bacc, blam, _)) => acc > *bacc || (acc == *bacc && lambda > *blam),
        };
        if better {
            best = Some((acc, lambda, model));
        }
    }
    let (_, lambda, model) = best.unwrap();
    Ok((lambda, model))
}
