//! Eigenfaces pipeline: PCA dimensionality reduction to a variance threshold
//! followed by a linear SVM, with grid search over (threshold, C).

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::TrainConfig;
use super::logistic::LinearModel;
use super::pca::{pca_fit, pca_project, PcaBasis};
use super::svm::train_linear_svm;
use super::accuracy;
use crate::error::{Error, Result};

/// Paper grid for the PCA variance threshold.
pub const VARIANCE_GRID: [f64; 3] = [0.25, 0.5, 0.95];

/// Samples used to fit the PCA basis are capped; the Gram-matrix
/// eigendecomposition is cubic in the fit-set size.
pub const PCA_FIT_CAP: usize = 512;

#[derive(Debug, Clone)]
pub struct EigenfacesModel {
    pub basis: PcaBasis,
    pub svm: LinearModel,
    pub chosen_threshold: f64,
    pub chosen_c: f64,
}

impl EigenfacesModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let projected = pca_project(&self.basis, x)?;
        Ok(self.svm.predict(projected.view()))
    }
}

fn truncate_basis(basis: &PcaBasis, threshold: f64) -> (usize, PcaBasis) {
    let mut cum = 0.0;
    let mut m = 0usize;
    for &f in &basis.explained {
        cum += f;
        m += 1;
        if cum >= threshold - 1e-12 {
            break;
        }
    }
    let m = m.max(1);
    (
        m,
        PcaBasis {
            components: basis.components.select(Axis(1), &(0..m).collect::<Vec<_>>()),
            mean: basis.mean.clone(),
            explained: basis.explained[..m].to_vec(),
            variance_threshold: threshold,
        },
    )
}

/// Fit the full pipeline. The PCA basis is fit once at the largest threshold
/// in the grid on a seeded subsample; smaller thresholds reuse prefixes of
/// the same component ordering.
pub fn train_eigenfaces(
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    variance_grid: &[f64],
    c_grid: &[f64],
    cfg: &TrainConfig,
    x_val: ArrayView2<f64>,
    y_val: &[usize],
) -> Result<EigenfacesModel> {
    if variance_grid.is_empty() || c_grid.is_empty() {
        return Err(Error::InvalidInput("empty grid".into()));
    }
    let max_threshold = variance_grid.iter().cloned().fold(0.0f64, f64::max);
    let fit_x = if x.nrows() > PCA_FIT_CAP {
        let mut idx: Vec<usize> = (0..x.nrows()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x9e3779b97f4a7c15);
        idx.shuffle(&mut rng);
        idx.truncate(PCA_FIT_CAP);
        idx.sort_unstable();
        x.select(Axis(0), &idx)
    } else {
        x.to_owned()
    };
    let basis = pca_fit(fit_x.view(), max_threshold)?;
    let train_proj = pca_project(&basis, x)?;
    let val_proj = pca_project(&basis, x_val)?;

    let mut best: Option<(f64, f64, f64, usize)> = None; // (acc, v, c, m)
    for &v in variance_grid {
        let (m, _) = truncate_basis(&basis, v);
        let tp = slice_cols(&train_proj, m);
        let vp = slice_cols(&val_proj, m);
        for &c in c_grid {
            let svm = train_linear_svm(tp.view(), y, n_classes, c, cfg, vp.view(), y_val)?;
            let acc = accuracy(&svm.predict(vp.view()), y_val);
            let better = match best {
                None => true,
                Some((bacc, ..)) => acc > bacc,
            };
            if better {
                best = Some((acc, v, c, m));
            }
        }
    }
    let (_, v, c, m) = best.unwrap();
    let (_, truncated) = truncate_basis(&basis, v);
    let tp = slice_cols(&train_proj, m);
    let vp = slice_cols(&val_proj, m);
    let svm = train_linear_svm(tp.view(), y, n_classes, c, cfg, vp.view(), y_val)?;
    Ok(EigenfacesModel { basis: truncated, svm, chosen_threshold: v, chosen_c: c })
}

fn slice_cols(x: &Array2<f64>, m: usize) -> Array2<f64> {
    x.select(Axis(1), &(0..m.min(x.ncols())).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::svm::C_GRID;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn separates_offset_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = 30;
        let n = 60;
        let mut x = Array2::zeros((n, d));
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 3;
            // each class lights up its own block of dimensions, so the
            // centroids span a plane rather than a line
            for j in 0..d {
                let offset = if j / 10 == c { 3.0 } else { 0.0 };
                x[[i, j]] = offset + rng.gen_range(-0.5..0.5);
            }
            y.push(c);
        }
        // 60 samples with batch 64 is one optimizer step per epoch, so the
        // tiny fixture needs a long patience window to converge
        let cfg = TrainConfig { max_epochs: 400, early_stop_patience: 100, ..Default::default() };
        let m = train_eigenfaces(x.view(), &y, 3, &VARIANCE_GRID, &C_GRID, &cfg, x.view(), &y)
            .unwrap();
        assert!(accuracy(&m.predict(x.view()).unwrap(), &y) >= 0.95);
        assert!(VARIANCE_GRID.contains(&m.chosen_threshold));
        assert!(C_GRID.contains(&m.chosen_c));
    }
}
