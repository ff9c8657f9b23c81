use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{center, column_means, sym_eigen_desc};

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retain {
    Count(usize),
    /// Smallest count whose cumulative explained variance reaches the fraction.
    Fraction(f64),
}

/// Principal-component basis fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: DVector<f64>,
    /// Retained components as orthonormal rows (`retained x p`).
    pub components: DMatrix<f64>,
    /// Explained-variance fraction of every non-null component, retained or not.
    pub explained: Vec<f64>,
    pub retained: usize,
    /// Set when the requested count exceeded the rank and was truncated.
    pub truncated: bool,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cumulative_explained(&self) -> f64 {
        self.explained[..self.retained].iter().sum()
    }

    /// Project rows (`n x p`) onto the retained components (`n x retained`).
    pub fn project(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        center(x, &self.mean) * self.components.transpose()
    }

    pub fn project_row(&self, x: &[f64]) -> DVector<f64> {
        let centered = DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        &self.components * centered
    }

    /// Map scores (`n x retained`) back to feature space.
    pub fn reconstruct(&self, scores: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = scores * &self.components;
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.mean[j]);
        }
        out
    }
}

/// Centered PCA of `rows` (`n x p`). Uses the `n x n` Gram matrix when
/// `n < p` and the `p x p` covariance otherwise.
pub fn fit_pca(rows: &DMatrix<f64>, retain: Retain) -> Result<PcaBasis> {
    let (n, p) = (rows.nrows(), rows.ncols());
    if n < 2 || p == 0 {
        return invalid(format!("PCA needs at least 2 rows and 1 column, got {n}x{p}"));
    }
    let mean = column_means(rows);
    let xc = center(rows, &mean);
    // Gram path: directions are recovered later, only for retained components.
    let (vals, gram_u, cov_dirs) = if n < p {
        let gram = &xc * xc.transpose();
        let (vals, u) = sym_eigen_desc(&gram);
        (vals, Some(u), None)
    } else {
        let cov = xc.transpose() * &xc;
        let (vals, dirs) = sym_eigen_desc(&cov);
        (vals, None, Some(dirs))
    };
    let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    let tol = 1e-12 * vals[0].max(0.0);
    let rank = vals.iter().take_while(|&&v| v > tol).count();
    let explained: Vec<f64> = if total > 0.0 { vals.iter().take(rank).map(|v| v / total).collect() } else { Vec::new() };
    let (mut k, mut truncated) = match retain {
        Retain::Count(k) => (k, false),
        Retain::Fraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return invalid("variance fraction must lie in (0, 1]");
            }
            let mut acc = 0.0;
            let mut k = rank;
            for (i, e) in explained.iter().enumerate() {
                acc += e;
                if acc >= f - 1e-12 {
                    k = i + 1;
                    break;
                }
            }
            (k, false)
        }
    };
    if k == 0 {
        return invalid("must retain at least one component");
    }
    if k > rank {
        log::warn!("requested {k} components but rank is {rank}; truncating");
        k = rank;
        truncated = true;
    }
    if k == 0 {
        return invalid("data has zero variance");
    }
    let mut components = DMatrix::zeros(k, p);
    for i in 0..k {
        let mut v = match (&gram_u, &cov_dirs) {
            // v_k = X^T u_k / sqrt(lambda_k)
            (Some(u), _) => xc.tr_mul(&u.column(i)) / vals[i].sqrt(),
            (_, Some(d)) => d.column(i).into_owned(),
            _ => unreachable!(),
        };
        // Gram-Schmidt clean-up against earlier components.
        for j in 0..i {
            let prev = components.row(j).transpose();
            let proj = v.dot(&prev);
            v -= prev * proj;
        }
        let norm = v.norm();
        v /= norm;
        crate::linalg::fix_sign(&mut v);
        components.set_row(i, &v.transpose());
    }
    Ok(PcaBasis { mean, components, explained, retained: k, truncated })
}

/// Smallest number of components whose cumulative explained variance reaches
/// `fraction`.
pub fn components_for_fraction(explained: &[f64], fraction: f64) -> Option<usize> {
    let mut acc = 0.0;
    for (i, e) in explained.iter().enumerate() {
        acc += e;
        if acc >= fraction - 1e-12 {
            return Some(i + 1);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::StreamKey::root(seed).rng();
        DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn full_rank_reconstruction_is_lossless() {
        for (n, p) in [(20, 5), (6, 30)] {
            let x = random(n, p, 3);
            let rank = n.min(p).min(if n <= p { n - 1 } else { p });
            let b = fit_pca(&x, Retain::Count(rank)).unwrap();
            let rec = b.reconstruct(&b.project(&x));
            let rel = (&rec - &x).norm() / x.norm();
            assert!(rel < 1e-8, "{n}x{p}: {rel}");
        }
    }

    #[test]
    fn components_are_orthonormal_and_sorted() {
        let x = random(40, 12, 5);
        let b = fit_pca(&x, Retain::Count(8)).unwrap();
        let g = &b.components * b.components.transpose();
        assert!((g - DMatrix::identity(8, 8)).amax() < 1e-8);
        assert!(b.explained.windows(2).all(|w| w[0] >= w[1] - 1e-15));
        assert!(b.explained.iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn retain_beyond_rank_truncates() {
        let x = random(5, 10, 9);
        let b = fit_pca(&x, Retain::Count(9)).unwrap();
        assert!(b.truncated);
        assert_eq!(b.retained, 4);
    }

    #[test]
    fn fraction_selects_minimal_count() {
        let x = random(50, 10, 1);
        let b = fit_pca(&x, Retain::Fraction(0.8)).unwrap();
        let k = components_for_fraction(&b.explained, 0.8).unwrap();
        assert_eq!(b.retained, k);
        assert!(b.cumulative_explained() >= 0.8 - 1e-12);
    }
}
