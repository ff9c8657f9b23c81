//! Shape metrics: brute-force equivalence and invariants.

mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::brute_force_mhd;
use whpa_bel::metrics::{mhd, ssim, standardize};
use whpa_bel::raster::{Point, Raster};

fn points() -> impl Strategy<Value = Vec<Point>> {
    proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0).prop_map(|(x, y)| Point::new(x, y)), 1..50)
}

fn shift(p: &[Point], dx: f64, dy: f64) -> Vec<Point> {
    p.iter().map(|q| Point::new(q.x + dx, q.y + dy)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn mhd_matches_brute_force(a in points(), b in points()) {
        let fast = mhd(&a, &b).unwrap();
        prop_assert!((fast - brute_force_mhd(&a, &b)).abs() <= 1e-12);
        prop_assert!(fast >= 0.0);
    }

    #[test]
    fn mhd_is_symmetric(a in points(), b in points()) {
        prop_assert_eq!(mhd(&a, &b).unwrap(), mhd(&b, &a).unwrap());
    }

    #[test]
    fn mhd_is_translation_invariant(a in points(), b in points(), dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
        let before = mhd(&a, &b).unwrap();
        let after = mhd(&shift(&a, dx, dy), &shift(&b, dx, dy)).unwrap();
        prop_assert!((before - after).abs() <= 1e-9 * (1.0 + before));
    }

    #[test]
    fn mhd_grows_as_a_set_moves_away(a in points(), angle in 0.0f64..std::f64::consts::TAU) {
        // once beyond the set's diameter, every extra step along the ray adds distance
        let (ux, uy) = (angle.cos(), angle.sin());
        let mut last = 0.0;
        for step in 0..6 {
            let t = 300.0 + 50.0 * step as f64;
            let d = mhd(&a, &shift(&a, t * ux, t * uy)).unwrap();
            prop_assert!(d >= last - 1e-9);
            last = d;
        }
    }

    #[test]
    fn standardizing_is_idempotent(v in proptest::collection::vec(-1e3f64..1e3, 2..40)) {
        let (once, flagged) = standardize(&v).unwrap();
        prop_assume!(!flagged);
        let (twice, _) = standardize(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}

fn smooth_image(rows: usize, cols: usize) -> Raster<f64> {
    Raster::from_vec(rows, cols, (0..rows * cols).map(|i| ((i / cols) as f64 * 0.2).sin() * 10.0 + (i % cols) as f64 * 0.3).collect())
}

fn add_noise(img: &Raster<f64>, amp: f64, seed: u64) -> Raster<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Raster::from_vec(img.rows(), img.cols(), img.as_slice().iter().map(|v| v + amp * rng.gen_range(-1.0..1.0)).collect())
}

#[test]
fn ssim_degrades_with_noise() {
    let base = smooth_image(40, 30);
    let mut last = ssim(&base, &base).unwrap();
    assert!((last - 1.0).abs() < 1e-12);
    for (k, amp) in [0.5, 2.0, 8.0, 32.0].iter().enumerate() {
        let s = ssim(&base, &add_noise(&base, *amp, k as u64)).unwrap();
        assert!(s < last, "noise {amp}: {s} not below {last}");
        assert!((-1.0..=1.0).contains(&s));
        last = s;
    }
}

#[test]
fn ssim_of_anticorrelated_images_is_negative() {
    // same local means, inverted local structure
    let checker = |sign: f64| Raster::from_vec(20, 20, (0..400).map(|i| 100.0 + sign * if (i / 20 + i % 20) % 2 == 0 { 5.0 } else { -5.0 }).collect());
    let (base, neg) = (checker(1.0), checker(-1.0));
    let s = ssim(&base, &neg).unwrap();
    assert!((-1.0..0.0).contains(&s), "{s}");
}
