//! Per-dimension Yeo-Johnson power transform followed by standardization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const LAMBDA_BOUNDS: (f64, f64) = (-5.0, 5.0);
const EPS: f64 = 1e-12;

pub fn yj_forward(x: f64, lambda: f64) -> f64 {
    if x >= 0.0 {
        if lambda.abs() < EPS {
            x.ln_1p()
        } else {
            (lambda * x.ln_1p()).exp_m1() / lambda
        }
    } else {
        let l2 = 2.0 - lambda;
        if l2.abs() < EPS {
            -(-x).ln_1p()
        } else {
            -(l2 * (-x).ln_1p()).exp_m1() / l2
        }
    }
}

/// Inverse transform. Values outside the image of the forward map (possible
/// for posterior samples when `lambda < 0` or `lambda > 2`) are clamped to
/// the edge of the invertible domain.
pub fn yj_inverse(y: f64, lambda: f64) -> f64 {
    if y >= 0.0 {
        if lambda.abs() < EPS {
            y.exp_m1()
        } else {
            let base = (1.0 + lambda * y).max(f64::MIN_POSITIVE);
            (base.ln() / lambda).exp_m1()
        }
    } else {
        let l2 = 2.0 - lambda;
        if l2.abs() < EPS {
            -(-y).exp_m1()
        } else {
            let base = (1.0 - l2 * y).max(f64::MIN_POSITIVE);
            -(base.ln() / l2).exp_m1()
        }
    }
}

/// Profile log-likelihood of `lambda` under a Gaussian model of the
/// transformed values.
pub fn yj_log_likelihood(x: &[f64], lambda: f64) -> f64 {
    let n = x.len() as f64;
    let t: Vec<f64> = x.iter().map(|&v| yj_forward(v, lambda)).collect();
    let mean = t.iter().sum::<f64>() / n;
    let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) || !var.is_finite() {
        return f64::NEG_INFINITY;
    }
    let jac: f64 = x.iter().map(|&v| v.signum() * v.abs().ln_1p()).sum();
    -0.5 * n * var.ln() + (lambda - 1.0) * jac
}

/// Maximum-likelihood `lambda` in [-5, 5]: a coarse grid scan, then golden
/// section refinement around the best grid point.
pub fn fit_lambda(x: &[f64]) -> f64 {
    let (lo, hi) = LAMBDA_BOUNDS;
    let steps = 40;
    let h = (hi - lo) / steps as f64;
    let f = |l: f64| -yj_log_likelihood(x, l);
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for i in 0..=steps {
        let v = f(lo + i as f64 * h);
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    let mut a = (lo + (best as f64 - 1.0) * h).max(lo);
    let mut b = (lo + (best as f64 + 1.0) * h).min(hi);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-10 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let l = 0.5 * (a + b);
    if f(l) <= best_v {
        l
    } else {
        lo + best as f64 * h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimTransform {
    pub lambda: f64,
    pub mean: f64,
    pub std: f64,
    /// Constant input column: passed through with only the mean removed.
    pub constant: bool,
}

impl DimTransform {
    pub fn apply(&self, x: f64) -> f64 {
        (yj_forward(x, self.lambda) - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        yj_inverse(z * self.std + self.mean, self.lambda)
    }
}

/// One transform per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub dims: Vec<DimTransform>,
}

impl Normalizer {
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let t = self.dims[j];
            col.apply(|v| *v = t.apply(*v));
        }
        out
    }

    pub fn apply_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().zip(&self.dims).map(|(&v, t)| t.apply(v)))
    }

    pub fn invert(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = z.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let t = self.dims[j];
            col.apply(|v| *v = t.invert(*v));
        }
        out
    }
}

/// Fit one Yeo-Johnson transform per column and standardize with the
/// population mean and standard deviation of the transformed column.
pub fn normalize_fit_apply(x: &DMatrix<f64>) -> Result<(Normalizer, DMatrix<f64>)> {
    if x.iter().any(|v| !v.is_finite()) {
        return invalid("normalizer input contains non-finite values");
    }
    if x.nrows() < 2 {
        return invalid("normalizer needs at least two rows");
    }
    let mut dims = Vec::with_capacity(x.ncols());
    for col in x.column_iter() {
        let v: Vec<f64> = col.iter().copied().collect();
        let n = v.len() as f64;
        let (min, max) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        if max - min <= 0.0 {
            log::warn!("constant canonical dimension; using identity transform");
            dims.push(DimTransform { lambda: 1.0, mean: yj_forward(v[0], 1.0), std: 1.0, constant: true });
            continue;
        }
        let lambda = fit_lambda(&v);
        let t: Vec<f64> = v.iter().map(|&x| yj_forward(x, lambda)).collect();
        let mean = t.iter().sum::<f64>() / n;
        let std = (t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        dims.push(DimTransform { lambda, mean, std, constant: false });
    }
    let norm = Normalizer { dims };
    let out = norm.apply(x);
    Ok((norm, out))
}
