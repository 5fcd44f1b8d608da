//! Principal component analysis via exact eigendecomposition (cyclic Jacobi),
//! using the Gram-matrix trick when samples are fewer than features.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Orthonormal component basis (D x M), the training mean, and per-component
/// explained-variance fractions.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    pub components: Array2<f64>,
    pub mean: Array1<f64>,
    pub explained: Vec<f64>,
    pub variance_threshold: f64,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors as columns), sorted descending.
pub fn jacobi_eigh(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::eye(n);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() < 1e-12 * (1.0 + m.diag().iter().map(|d| d.abs()).fold(0.0, f64::max)) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a_, &b_| m[[b_, b_]].partial_cmp(&m[[a_, a_]]).unwrap());
    let eigvals: Vec<f64> = order.iter().map(|&i| m[[i, i]]).collect();
    let eigvecs = v.select(Axis(1), &order);
    (eigvals, eigvecs)
}

/// Fit a PCA basis keeping the smallest number of top components whose
/// cumulative explained variance reaches `variance_threshold`.
pub fn pca_fit(x: ArrayView2<f64>, variance_threshold: f64) -> Result<PcaBasis> {
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return Err(Error::InvalidInput("variance threshold must be in (0, 1]".into()));
    }
    let (n, d) = (x.nrows(), x.ncols());
    if n < 2 {
        return Err(Error::InsufficientData("PCA needs at least 2 samples".into()));
    }
    let mean = x.mean_axis(Axis(0)).unwrap();
    let centered = &x - &mean;
    // eigenvalue floor, relative to total variance, below which a direction
    // is numerical noise rather than signal
    let (eigvals, components) = if n <= d {
        // Gram trick: eigenvectors of X Xt lift to feature space.
        let gram = centered.dot(&centered.t());
        let (vals, vecs) = jacobi_eigh(&gram);
        let mut comps = Array2::zeros((d, 0));
        let mut kept_vals = Vec::new();
        let total: f64 = vals.iter().filter(|v| **v > 0.0).sum();
        let mut cols: Vec<Array1<f64>> = Vec::new();
        for (i, &lam) in vals.iter().enumerate() {
            if lam <= 1e-12 * total.max(1e-300) {
                break;
            }
            let u = vecs.column(i);
            let comp = centered.t().dot(&u) / lam.sqrt();
            cols.push(comp);
            kept_vals.push(lam);
        }
        if !cols.is_empty() {
            comps = Array2::zeros((d, cols.len()));
            for (j, c) in cols.iter().enumerate() {
                comps.column_mut(j).assign(c);
            }
        }
        (kept_vals, comps)
    } else {
        let cov = centered.t().dot(&centered);
        let (vals, vecs) = jacobi_eigh(&cov);
        let total: f64 = vals.iter().filter(|v| **v > 0.0).sum();
        let kept = vals.iter().take_while(|&&l| l > 1e-12 * total.max(1e-300)).count();
        (
            vals[..kept].to_vec(),
            vecs.select(Axis(1), &(0..kept).collect::<Vec<_>>()),
        )
    };
    let total: f64 = eigvals.iter().sum();
    if total <= 0.0 {
        return Err(Error::InsufficientData("zero-variance data".into()));
    }
    let mut cum = 0.0;
    let mut m = 0usize;
    for &l in &eigvals {
        cum += l / total;
        m += 1;
        if cum >= variance_threshold - 1e-12 {
            break;
        }
    }
    Ok(PcaBasis {
        components: components.select(Axis(1), &(0..m).collect::<Vec<_>>()),
        mean,
        explained: eigvals[..m].iter().map(|l| l / total).collect(),
        variance_threshold,
    })
}

/// Project samples onto the basis: components^T (x - mean).
pub fn pca_project(basis: &PcaBasis, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != basis.mean.len() {
        return Err(Error::ShapeError(format!(
            "feature dim {} vs basis dim {}",
            x.ncols(),
            basis.mean.len()
        )));
    }
    Ok((&x - &basis.mean).dot(&basis.components))
}

/// Mean squared reconstruction error after truncating to the basis.
pub fn reconstruction_error(basis: &PcaBasis, x: ArrayView2<f64>) -> Result<f64> {
    let projected = pca_project(basis, x)?;
    let rebuilt = projected.dot(&basis.components.t()) + &basis.mean;
    let diff = &x - &rebuilt;
    Ok(diff.iter().map(|v| v * v).sum::<f64>() / x.len() as f64)
}
