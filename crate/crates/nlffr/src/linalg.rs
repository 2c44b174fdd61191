//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
///
/// Returns `(values, vectors)` where column `j` of `vectors` pairs with
/// `values[j]`.
pub fn sym_eigen_desc(mat: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = mat.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_fn(n, |j, _| eig.eigenvalues[order[j]]);
    let mut vectors = DMatrix::zeros(n, n);
    for (j, &src) in order.iter().enumerate() {
        vectors.set_column(j, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Cholesky factorization of a symmetric PSD matrix plus ridge.
///
/// Factors `mat + epsilon I`. If that fails (tiny negative eigenvalues from
/// rounding), one jitter of `1e-10 trace(mat)/n` is added before failing hard.
pub fn ridge_cholesky(mat: &DMatrix<f64>, epsilon: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = mat.nrows();
    let mut a = mat.clone();
    for i in 0..n {
        a[(i, i)] += epsilon;
    }
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Ok(chol);
    }
    let jitter = 1e-10 * mat.trace() / n as f64;
    for i in 0..n {
        a[(i, i)] += jitter;
    }
    Cholesky::new(a).ok_or_else(|| {
        Error::numerical(format!(
            "Cholesky of ridge system (n = {n}, epsilon = {epsilon:e}) failed even after jitter; \
             input is likely corrupted (NaN/Inf or far from PSD)"
        ))
    })
}

/// Double-centers a symmetric Gram matrix: `G = Q K Q` with `Q = I - 11'/n`.
pub fn center_gram(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = k[(i, j)] - row_means[i] - row_means[j] + grand;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Projects a vector onto the zero-sum subspace: `Q v = v - mean(v)`.
pub fn center_vector(v: &DVector<f64>) -> DVector<f64> {
    let mean = v.mean();
    v.map(|x| x - mean)
}

/// Trapezoidal quadrature of samples `f` over the (sorted) `grid`.
pub fn trapezoid(f: &[f64], grid: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..grid.len() {
        acc += 0.5 * (f[i] + f[i - 1]) * (grid[i] - grid[i - 1]);
    }
    acc
}

/// Median of unsorted data (average of the two middle order statistics).
pub fn median(data: &[f64]) -> f64 {
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linearly interpolated quantile (R type 7) of unsorted data, `p` in `[0,1]`.
pub fn quantile(data: &[f64], p: f64) -> f64 {
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 1 {
        return v[0];
    }
    let h = p * (n as f64 - 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}
