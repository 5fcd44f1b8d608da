//! k-nearest-neighbor classification with Euclidean distances, majority vote,
//! ties broken by the smallest summed distance.

use ndarray::{ArrayView2, Axis};

use crate::error::{Error, Result};

/// Squared Euclidean distances via the expansion |a-b|^2 = |a|^2 + |b|^2 - 2ab,
/// so the dominant cost is one matrix product.
fn squared_distances(train: ArrayView2<f64>, query: ArrayView2<f64>) -> ndarray::Array2<f64> {
    let tn: Vec<f64> = train.rows().into_iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let qn: Vec<f64> = query.rows().into_iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let mut cross = query.dot(&train.t());
    for (i, mut row) in cross.axis_iter_mut(Axis(0)).enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (qn[i] + tn[j] - 2.0 * *v).max(0.0);
        }
    }
    cross
}

pub fn knn_classify(
    train_x: ArrayView2<f64>,
    train_y: &[usize],
    query_x: ArrayView2<f64>,
    k: usize,
) -> Result<Vec<usize>> {
    if k == 0 || k > train_x.nrows() {
        return Err(Error::InvalidInput(format!(
            "k = {k} out of range for {} training samples",
            train_x.nrows()
        )));
    }
    if train_x.nrows() != train_y.len() {
        return Err(Error::ShapeError("train features/labels length mismatch".into()));
    }
    let n_classes = train_y.iter().max().map(|m| m + 1).unwrap_or(0);
    let dists = squared_distances(train_x, query_x);
    let mut out = Vec::with_capacity(query_x.nrows());
    for row in dists.rows() {
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.select_nth_unstable_by(k - 1, |&a, &b| row[a].partial_cmp(&row[b]).unwrap());
        let neighbors = &idx[..k];
        let mut votes = vec![0usize; n_classes];
        let mut dist_sum = vec![0.0f64; n_classes];
        for &i in neighbors {
            votes[train_y[i]] += 1;
            dist_sum[train_y[i]] += row[i].sqrt();
        }
        let best = (0..n_classes)
            .max_by(|&a, &b| {
                votes[a]
                    .cmp(&votes[b])
                    .then(dist_sum[b].partial_cmp(&dist_sum[a]).unwrap())
            })
            .unwrap();
        out.push(best);
    }
    Ok(out)
}

/// The paper's neighbor grid: k in {1} union {2^kappa + 1 : kappa = 1..10},
/// truncated to the training-set size.
pub fn knn_k_grid(train_size: usize) -> Vec<usize> {
    std::iter::once(1usize)
        .chain((1..=10u32).map(|kappa| (1usize << kappa) + 1))
        .filter(|&k| k <= train_size)
        .collect()
}

/// Pick k by validation accuracy; ties break toward smaller k.
pub fn knn_grid_search(
    train_x: ArrayView2<f64>,
    train_y: &[usize],
    val_x: ArrayView2<f64>,
    val_y: &[usize],
    grid: &[usize],
) -> Result<usize> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty k grid".into()));
    }
    let mut best = (f64::NEG_INFINITY, 0usize);
    for &k in grid {
        let pred = knn_classify(train_x, train_y, val_x, k)?;
        let acc = super::accuracy(&pred, val_y);
        if acc > best.0 {
            best = (acc, k);
        }
    }
    Ok(best.1)
}
