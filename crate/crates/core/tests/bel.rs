//! Learning chain: conditioning, sampling, transforms and the full fit.

mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use common::{bivariate_conditioning, brute_force_mhd};
use whpa_bel::bel::{
    condition, fit_bel, fit_cca, fit_pca, fit_posterior_terms, normalize_fit_apply, sample_posterior, yj_forward, yj_inverse, BelConfig,
    Retain, TrainingMeta,
};
use whpa_bel::geometry::{extract_zero_contour, signed_distance, BinaryImage, SubgridSpec};
use whpa_bel::raster::{Point, Raster};

fn gaussian_rows(n: usize, chol: &DMatrix<f64>, mean: &DVector<f64>, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let p = mean.len();
    let z = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut x = (chol * z).transpose();
    for (j, mut col) in x.column_iter_mut().enumerate() {
        col.add_scalar_mut(mean[j]);
    }
    x
}

#[test]
fn bivariate_posterior_matches_closed_form() {
    let r = bivariate_conditioning(10_000, 42);
    assert!(r.mean_rel_err < 0.02, "mean error {}", r.mean_rel_err);
    assert!(r.var_rel_err < 0.02, "variance error {}", r.var_rel_err);
}

#[test]
fn four_dimensional_posterior_matches_schur_complement() {
    // joint covariance of (h1, h2, d1, d2), zero mean like canonical variates
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, 0.0, 0.0, //
            0.3, 0.9, 0.0, 0.0, //
            0.6, 0.2, 0.7, 0.0, //
            -0.4, 0.5, 0.1, 0.6,
        ],
    );
    let cov = &a * a.transpose();
    let mean = DVector::zeros(4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = gaussian_rows(20_000, &a, &mean, &mut rng);
    let h = x.columns(0, 2).into_owned();
    let d = x.columns(2, 2).into_owned();
    let terms = fit_posterior_terms(&h, &d).unwrap();
    let d_obs = DVector::from_vec(vec![1.5, -0.7]);
    let (mu, sigma) = condition(&terms, &d_obs).unwrap();

    let shh = cov.view((0, 0), (2, 2));
    let shd = cov.view((0, 2), (2, 2));
    let sdd_inv = cov.view((2, 2), (2, 2)).into_owned().try_inverse().unwrap();
    let exact_mu = shd * &sdd_inv * &d_obs;
    let exact_sigma = shh - shd * &sdd_inv * shd.transpose();
    assert!((&mu - &exact_mu).norm() / exact_mu.norm() < 0.02, "{mu} vs {exact_mu}");
    assert!((&sigma - &exact_sigma).norm() / exact_sigma.norm() < 0.03, "{sigma} vs {exact_sigma}");
    // symmetric positive definite and observation independent
    assert!((&sigma - sigma.transpose()).amax() < 1e-12);
    assert!(sigma.clone().cholesky().is_some());
    let (_, other) = condition(&terms, &DVector::from_vec(vec![-3.0, 4.0])).unwrap();
    assert_eq!(sigma, other);
}

#[test]
fn posterior_samples_converge() {
    let mu = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let l = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.5, 0.8, 0.0, -0.3, 0.2, 0.4]);
    let sigma = &l * l.transpose();
    let zeta = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = sample_posterior(&mu, &sigma, zeta, &mut rng).unwrap();
    let n = zeta as f64;
    let means: Vec<f64> = s.column_iter().map(|c| c.mean()).collect();
    for j in 0..3 {
        let se = (sigma[(j, j)] / n).sqrt();
        assert!((means[j] - mu[j]).abs() < 3.0 * se, "mean {j}");
    }
    for i in 0..3 {
        for j in 0..3 {
            let c = s.column(i).iter().zip(s.column(j).iter()).map(|(a, b)| (a - means[i]) * (b - means[j])).sum::<f64>() / (n - 1.0);
            let se = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / n).sqrt();
            assert!((c - sigma[(i, j)]).abs() < 3.0 * se, "cov ({i},{j}) {c} vs {}", sigma[(i, j)]);
        }
    }
}

fn skewness(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n / v.powf(1.5)
}

#[test]
fn yeo_johnson_reduces_skewness() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let col: Vec<f64> = (0..2000).map(|_| (0.8 * rng.sample::<f64, _>(StandardNormal)).exp()).collect();
    let x = DMatrix::from_column_slice(col.len(), 1, &col);
    let (norm, z) = normalize_fit_apply(&x).unwrap();
    let after: Vec<f64> = z.column(0).iter().copied().collect();
    assert!(skewness(&after).abs() < skewness(&col).abs());
    let back = norm.invert(&z);
    assert!((back - x).amax() < 1e-8);
}

proptest! {
    #[test]
    fn yeo_johnson_round_trips(x in -50.0f64..50.0, lambda in -3.0f64..3.0) {
        let y = yj_forward(x, lambda);
        prop_assume!(y.is_finite());
        prop_assert!((yj_inverse(y, lambda) - x).abs() <= 1e-8 * (1.0 + x.abs()));
    }

    #[test]
    fn pca_components_are_orthonormal(seed in 0u64..500, n in 5usize..30, p in 2usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |i, j| rng.sample::<f64, _>(StandardNormal) * (1.0 + j as f64) + (i * j) as f64 * 0.01);
        let basis = fit_pca(&x, Retain::Fraction(1.0)).unwrap();
        let g = &basis.components * basis.components.transpose();
        prop_assert!((g - DMatrix::identity(basis.retained, basis.retained)).amax() < 1e-8);
        prop_assert!(basis.explained.windows(2).all(|w| w[0] >= w[1] - 1e-12));
        prop_assert!(basis.explained.iter().sum::<f64>() <= 1.0 + 1e-9);
    }
}

#[test]
fn canonical_variates_are_white_and_sorted() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 500;
    let latent = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mix_x = DMatrix::from_fn(3, 6, |_, _| rng.gen_range(-1.0..1.0));
    let mix_y = DMatrix::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0));
    let x = &latent * mix_x + DMatrix::from_fn(n, 6, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
    let y = &latent * mix_y + DMatrix::from_fn(n, 4, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
    let cca = fit_cca(&x, &y).unwrap();
    assert_eq!(cca.eta(), 4);
    for w in cca.correlations.windows(2) {
        assert!(w[0] >= w[1]);
    }
    assert!(cca.correlations.iter().all(|r| (0.0..=1.0).contains(r)));
    for v in [cca.x_variates(&x), cca.y_variates(&y)] {
        let c = whpa_bel::linalg::covariance(&v);
        assert!((c - DMatrix::identity(4, 4)).amax() < 1e-6);
    }
}

/// Ellipse family: shape parameters drive both the image and a synthetic
/// curve so the learning chain has a real relation to find.
fn ellipse_case(params: (f64, f64, f64), sub: &SubgridSpec) -> (Vec<f64>, Vec<f64>, Vec<Point>) {
    let (a, b, shift) = params;
    let (rows, cols) = (sub.rows(), sub.cols());
    let mut cells = Raster::filled(rows, cols, 0u8);
    for r in 0..rows {
        for c in 0..cols {
            let p = sub.center(r, c);
            if ((p.x - shift) / a).powi(2) + (p.y / b).powi(2) < 1.0 {
                cells.set(r, c, 1);
            }
        }
    }
    let img = BinaryImage { sub: sub.clone(), cells, outside: false };
    let sd = signed_distance(&img, sub.cell).unwrap();
    let contour = extract_zero_contour(&sd);
    let curve: Vec<f64> = (0..30)
        .map(|i| {
            let t = i as f64;
            (-(t - a).powi(2) / (2.0 * b)).exp() * (1.0 + 0.05 * shift) + 0.02 * (t * shift).sin()
        })
        .collect();
    (curve, sd.values.into_vec(), contour)
}

#[test]
fn training_curve_prediction_beats_nearest_neighbour_baseline() {
    let sub = SubgridSpec { x_min: -30.0, x_max: 30.0, y_min: -20.0, y_max: 20.0, cell: 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 160;
    let cases: Vec<_> =
        (0..n).map(|_| ellipse_case((rng.gen_range(8.0..20.0), rng.gen_range(5.0..12.0), rng.gen_range(-6.0..6.0)), &sub)).collect();
    let d = DMatrix::from_fn(n, 30, |i, j| cases[i].0[j]);
    let h = DMatrix::from_fn(n, sub.n_cells(), |i, j| cases[i].1[j]);
    let meta = TrainingMeta { wells: vec![0], k: 30, sub: sub.clone(), training_fingerprint: String::new() };
    let cfg = BelConfig { retain_d: Retain::Count(10), retain_h: Retain::Count(8) };
    let model = fit_bel(&d, &h, meta, &cfg).unwrap();

    for target in [0usize, 7, 33] {
        let truth = &cases[target].2;
        let mean = model.predict_mean_image(&cases[target].0).unwrap();
        let got = brute_force_mhd(truth, &extract_zero_contour(&mean));
        let mut others: Vec<f64> = (0..n).filter(|&j| j != target).map(|j| brute_force_mhd(truth, &cases[j].2)).collect();
        others.sort_by(f64::total_cmp);
        let baseline = others[..5].iter().sum::<f64>() / 5.0;
        assert!(got <= 2.0 * baseline, "target {target}: {got} vs baseline {baseline}");
    }
}
