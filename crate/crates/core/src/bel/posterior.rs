//! Linear-Gaussian conditioning of target variates on predictor variates.
//!
//! Model: `h ~ N(mu_h, S_hh)` and `d = G h + e` with `e ~ N(mu_e, S_e)`.
//! The joint precision has blocks
//! `L11 = S_hh^-1 + G^T S_e^-1 G` and `L12 = -G^T S_e^-1`, so
//! `h | d ~ N(mu_h - L11^-1 L12 (d - mu_d), L11^-1)` with `mu_d = G mu_h + mu_e`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{column_means, covariance, psd_factor, spd_inverse, symmetrize};

const JITTER_REL: f64 = 1e-10;
const NEG_TOL_REL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTerms {
    /// OLS map from target to predictor variates (`eta x eta`).
    pub g: DMatrix<f64>,
    pub mu_h: DVector<f64>,
    pub sigma_hh: DMatrix<f64>,
    /// Mean and covariance of the OLS residuals.
    pub mu_e: DVector<f64>,
    pub sigma_e: DMatrix<f64>,
    pub lambda11: DMatrix<f64>,
    pub lambda12: DMatrix<f64>,
    /// Posterior covariance; does not depend on the observation.
    pub sigma_post: DMatrix<f64>,
    pub jittered: bool,
}

impl PosteriorTerms {
    pub fn eta(&self) -> usize {
        self.mu_h.len()
    }

    pub fn mu_d(&self) -> DVector<f64> {
        &self.g * &self.mu_h + &self.mu_e
    }
}

/// Fit `G` by uncentered least squares (`G^T = (H^T H)^-1 H^T D`), take the
/// residual mean and covariance as the noise model, and precompute the
/// posterior covariance.
pub fn fit_posterior_terms(hc: &DMatrix<f64>, dc: &DMatrix<f64>) -> Result<PosteriorTerms> {
    let (n, eta) = (hc.nrows(), hc.ncols());
    if dc.nrows() != n || dc.ncols() != eta {
        return Err(Error::ShapeMismatch {
            expected: format!("{n}x{eta}"),
            actual: format!("{}x{}", dc.nrows(), dc.ncols()),
        });
    }
    if n <= eta {
        return Err(Error::TooFewSamples { required: eta, actual: n });
    }
    let hth = hc.tr_mul(hc);
    let htd = hc.tr_mul(dc);
    let gt = hth
        .clone()
        .cholesky()
        .map(|c| c.solve(&htd))
        .or_else(|| hth.clone().lu().solve(&htd))
        .ok_or_else(|| Error::Numerical("singular normal equations in OLS fit".into()))?;
    let g = gt.transpose();
    let resid = dc - hc * &gt;
    let mu_e = column_means(&resid);
    let sigma_e = covariance(&resid);
    let mu_h = column_means(hc);
    let sigma_hh = covariance(hc);

    let (shh_inv, j1) = spd_inverse(&sigma_hh, JITTER_REL, 1.0)?;
    let (se_inv, j2) = spd_inverse(&sigma_e, JITTER_REL, 1.0)?;
    let gt_se_inv = g.tr_mul(&se_inv);
    let mut lambda11 = &shh_inv + &gt_se_inv * &g;
    symmetrize(&mut lambda11);
    let lambda12 = -gt_se_inv;
    let (sigma_post, j3) = spd_inverse(&lambda11, JITTER_REL, 1.0)?;
    let jittered = j1 || j2 || j3;
    if jittered {
        log::warn!("posterior terms needed diagonal jitter to stay positive definite");
    }
    Ok(PosteriorTerms { g, mu_h, sigma_hh, mu_e, sigma_e, lambda11, lambda12, sigma_post, jittered })
}

/// Posterior mean and covariance of the target variates given an observed
/// predictor variate vector.
pub fn condition(terms: &PosteriorTerms, d_obs: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if d_obs.len() != terms.eta() {
        return Err(Error::ShapeMismatch { expected: terms.eta().to_string(), actual: d_obs.len().to_string() });
    }
    if d_obs.iter().any(|v| !v.is_finite()) {
        return invalid("observation contains non-finite values");
    }
    let innov = d_obs - terms.mu_d();
    let mu = &terms.mu_h - &terms.sigma_post * (&terms.lambda12 * innov);
    Ok((mu, terms.sigma_post.clone()))
}

/// `zeta` draws from `N(mu, sigma)` as rows of a `zeta x eta` matrix.
pub fn sample_posterior<R: Rng + ?Sized>(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    zeta: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let eta = mu.len();
    if sigma.nrows() != eta || sigma.ncols() != eta {
        return Err(Error::ShapeMismatch {
            expected: format!("{eta}x{eta}"),
            actual: format!("{}x{}", sigma.nrows(), sigma.ncols()),
        });
    }
    let l = psd_factor(sigma, NEG_TOL_REL)?;
    let z = DMatrix::from_fn(eta, zeta, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut out = (l * z).transpose();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(mu[j]);
    }
    Ok(out)
}
