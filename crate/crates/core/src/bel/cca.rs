use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{center, column_means, covariance, cross_covariance, fix_sign, inv_sqrt_psd, pinv};

const RIDGE_REL: f64 = 1e-8;

/// Canonical correlation weights fitted on the PCA scores of both sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaModel {
    pub x_mean: DVector<f64>,
    pub y_mean: DVector<f64>,
    /// `delta x eta` predictor weights.
    pub wx: DMatrix<f64>,
    /// `v x eta` target weights.
    pub wy: DMatrix<f64>,
    /// Pseudo-inverse of `wy`, used to map target variates back to PC scores.
    pub wy_pinv: DMatrix<f64>,
    pub correlations: Vec<f64>,
    /// Set when either within-set covariance needed a ridge to be whitened.
    pub regularized: bool,
}

impl CcaModel {
    pub fn eta(&self) -> usize {
        self.correlations.len()
    }

    pub fn x_variates(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        center(x, &self.x_mean) * &self.wx
    }

    pub fn y_variates(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        center(y, &self.y_mean) * &self.wy
    }

    pub fn x_variates_row(&self, x: &DVector<f64>) -> DVector<f64> {
        self.wx.tr_mul(&(x - &self.x_mean))
    }

    /// Least-squares inverse of the target projection (`n x eta` -> `n x v`).
    pub fn y_backproject(&self, yc: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = yc * &self.wy_pinv;
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.y_mean[j]);
        }
        out
    }
}

/// Canonical correlation analysis by whitening both sets and taking the SVD
/// of the whitened cross-covariance. Keeps `min(x.ncols(), y.ncols())` pairs.
pub fn fit_cca(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<CcaModel> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::ShapeMismatch { expected: format!("{n} rows"), actual: format!("{} rows", y.nrows()) });
    }
    let need = x.ncols().max(y.ncols());
    if n <= need {
        return Err(Error::TooFewSamples { required: need, actual: n });
    }
    let eta = x.ncols().min(y.ncols());
    let (sx, rx) = inv_sqrt_psd(&covariance(x), RIDGE_REL);
    let (sy, ry) = inv_sqrt_psd(&covariance(y), RIDGE_REL);
    if rx || ry {
        log::warn!("CCA whitening needed a ridge (rank-deficient scores)");
    }
    let k = &sx * cross_covariance(x, y) * &sy;
    let svd = k.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Numerical("SVD did not return V".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let mut uu = DMatrix::zeros(x.ncols(), eta);
    let mut vv = DMatrix::zeros(y.ncols(), eta);
    let mut correlations = Vec::with_capacity(eta);
    for (dst, &src) in order.iter().take(eta).enumerate() {
        let mut a = u.column(src).into_owned();
        let mut b = vt.row(src).transpose();
        let before = a.clone();
        fix_sign(&mut a);
        if a != before {
            b.neg_mut();
        }
        uu.set_column(dst, &a);
        vv.set_column(dst, &b);
        correlations.push(svd.singular_values[src].clamp(0.0, 1.0));
    }
    let wx = sx * uu;
    let wy = sy * vv;
    let wy_pinv = pinv(&wy)?;
    Ok(CcaModel {
        x_mean: column_means(x),
        y_mean: column_means(y),
        wx,
        wy,
        wy_pinv,
        correlations,
        regularized: rx || ry,
    })
}
