//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Eigenvector signs are fixed so the entry with the largest
/// magnitude in each vector is positive.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        fix_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

pub(crate) fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for x in v.iter() {
        if x.abs() > best + 1e-12 {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.neg_mut();
    }
}

/// Column means of a sample-by-feature matrix.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Subtract `mean` from every row.
pub fn center(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    out
}

/// Unbiased sample covariance of the columns (rows are samples).
pub fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = column_means(x);
    let xc = center(x, &mean);
    let denom = (x.nrows() as f64 - 1.0).max(1.0);
    let mut c = xc.transpose() * &xc / denom;
    symmetrize(&mut c);
    c
}

/// Unbiased sample cross-covariance between the columns of `x` and `y`.
pub fn cross_covariance(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let xc = center(x, &column_means(x));
    let yc = center(y, &column_means(y));
    let denom = (x.nrows() as f64 - 1.0).max(1.0);
    xc.transpose() * yc / denom
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Inverse square root of a symmetric positive semi-definite matrix.
///
/// When the smallest eigenvalue falls under `1e-12 * trace`, a ridge of
/// `ridge_rel * trace` is added to the diagonal first. Returns the matrix and
/// whether the ridge was applied.
pub fn inv_sqrt_psd(c: &DMatrix<f64>, ridge_rel: f64) -> (DMatrix<f64>, bool) {
    let trace = c.trace().abs().max(f64::MIN_POSITIVE);
    let (vals, vecs) = sym_eigen_desc(c);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let ridge = if min <= 1e-12 * trace { ridge_rel * trace } else { 0.0 };
    let d = DVector::from_iterator(vals.len(), vals.iter().map(|&l| 1.0 / (l.max(0.0) + ridge).sqrt()));
    let scaled = &vecs * DMatrix::from_diagonal(&d);
    (scaled * vecs.transpose(), ridge > 0.0)
}

/// Inverse of a symmetric positive definite matrix via Cholesky. On failure a
/// jitter of `jitter_rel * scale` is added to the diagonal, where `scale` is the
/// trace (or `fallback_scale` when the trace vanishes). Returns the inverse
/// and whether jitter was needed.
pub fn spd_inverse(m: &DMatrix<f64>, jitter_rel: f64, fallback_scale: f64) -> Result<(DMatrix<f64>, bool)> {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    if let Some(ch) = sym.clone().cholesky() {
        let mut inv = ch.inverse();
        symmetrize(&mut inv);
        return Ok((inv, false));
    }
    let trace = sym.trace();
    let scale = if trace > 0.0 { trace } else { fallback_scale.max(f64::MIN_POSITIVE) };
    let mut jitter = jitter_rel * scale;
    for _ in 0..12 {
        let mut j = sym.clone();
        for i in 0..j.nrows() {
            j[(i, i)] += jitter;
        }
        if let Some(ch) = j.cholesky() {
            let mut inv = ch.inverse();
            symmetrize(&mut inv);
            return Ok((inv, true));
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical("matrix is not positive definite even after jitter".into()))
}

/// Symmetric square-root factor `L` with `L * L^T = sigma`.
///
/// Negative eigenvalues down to `-neg_tol_rel * trace` are clipped to zero;
/// anything more negative is rejected.
pub fn psd_factor(sigma: &DMatrix<f64>, neg_tol_rel: f64) -> Result<DMatrix<f64>> {
    if sigma.nrows() != sigma.ncols() {
        return Err(Error::ShapeMismatch {
            expected: "square matrix".into(),
            actual: format!("{}x{}", sigma.nrows(), sigma.ncols()),
        });
    }
    let trace = sigma.trace().abs();
    let (vals, vecs) = sym_eigen_desc(sigma);
    let mut d = DVector::zeros(vals.len());
    for (i, &l) in vals.iter().enumerate() {
        if l < -neg_tol_rel * trace.max(f64::MIN_POSITIVE) {
            return Err(Error::Numerical(format!(
                "covariance has eigenvalue {l:e} below tolerance (trace {trace:e})"
            )));
        }
        d[i] = l.max(0.0).sqrt();
    }
    Ok(vecs * DMatrix::from_diagonal(&d))
}

/// Moore-Penrose pseudo-inverse.
pub fn pinv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eps = 1e-12 * m.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
    m.clone()
        .pseudo_inverse(eps)
        .map_err(|e| Error::Numerical(format!("pseudo-inverse failed: {e}")))
}
