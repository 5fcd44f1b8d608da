//! Linear SVM: one-vs-rest hinge loss with l2 regularization weighted by 1/C,
//! optimized by the shared Adam loop.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, TrainConfig};
use super::logistic::{argmax_rows, LinearModel, RegKind};
use super::accuracy;
use crate::error::{Error, Result};

/// Paper grid for the SVM regularization parameter.
pub const C_GRID: [f64; 4] = [0.0001, 0.001, 0.01, 0.1];

fn hinge_grad(
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    x: ArrayView2<f64>,
    y: &[usize],
    c: f64,
) -> (Array2<f64>, Array1<f64>) {
    let k = weights.ncols();
    let mut z = x.dot(weights);
    z += bias;
    // signs s_ik = +1 for the true class, -1 otherwise; subgradient of
    // mean_i sum_k max(0, 1 - s_ik z_ik)
    let n = y.len() as f64;
    let mut gz = Array2::zeros(z.dim());
    for (i, &label) in y.iter().enumerate() {
        for j in 0..k {
            let s = if j == label { 1.0 } else { -1.0 };
            if 1.0 - s * z[[i, j]] > 0.0 {
                gz[[i, j]] = -s / n;
            }
        }
    }
    let mut gw = x.t().dot(&gz);
    gw += &(weights / c * 2.0e-3); // l2 term 1e-3/C * ||W||^2
    let gb = gz.sum_axis(Axis(0));
    (gw, gb)
}

/// Train a one-vs-rest linear SVM with Adam; validation accuracy drives
/// early stopping with best-snapshot restore.
pub fn train_linear_svm(
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    c: f64,
    cfg: &TrainConfig,
    x_val: ArrayView2<f64>,
    y_val: &[usize],
) -> Result<LinearModel> {
    if n_classes < 2 {
        return Err(Error::DegenerateLabels("SVM needs at least 2 classes".into()));
    }
    let mut seen = vec![false; n_classes];
    for &l in y {
        if l >= n_classes {
            return Err(Error::InvalidInput(format!("label {l} out of range")));
        }
        seen[l] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::DegenerateLabels("training labels contain a single class".into()));
    }
    if c <= 0.0 {
        return Err(Error::InvalidInput("C must be positive".into()));
    }
    let d = x.ncols();
    let mut weights = Array2::zeros((d, n_classes));
    let mut bias = Array1::zeros(n_classes);
    let mut opt = Adam::new(d * n_classes + n_classes, cfg.adam.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut best = (weights.clone(), bias.clone());
    let mut best_acc = f64::NEG_INFINITY;
    let mut stale = 0usize;
    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (gw, gb) = hinge_grad(&weights, &bias, xb.view(), &yb, c);
            let mut params: Vec<f64> = weights.iter().chain(bias.iter()).copied().collect();
            let grads: Vec<f64> = gw.iter().chain(gb.iter()).copied().collect();
            opt.step(&mut params, &grads);
            weights = Array2::from_shape_vec((d, n_classes), params[..d * n_classes].to_vec()).unwrap();
            bias = Array1::from_vec(params[d * n_classes..].to_vec());
        }
        let mut z = x_val.dot(&weights);
        z += &bias;
        let acc = accuracy(&argmax_rows(&z), y_val);
        // ties refresh the snapshot but still count toward patience
        if acc >= best_acc {
            best = (weights.clone(), bias.clone());
        }
        if acc > best_acc {
            best_acc = acc;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                break;
            }
        }
    }
    Ok(LinearModel { weights: best.0, bias: best.1, reg_kind: RegKind::L2, reg_lambda: 1.0 / c })
}
