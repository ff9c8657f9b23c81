//! Flow and transport against closed-form oracles.

mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{ade_report, linear_head_error, plane_curve, uniform_flow};
use whpa_bel::config::ScenarioConfig;
use whpa_bel::flow::{solve_steady_flow, BoundaryHeads, FlowParams, FlowSolution};
use whpa_bel::pipeline::{realize_field, solve_flow};
use whpa_bel::prior::{simulate_field, GridSpec, PriorSpec};
use whpa_bel::transport::TransportParams;

#[test]
fn homogeneous_heads_are_linear() {
    let worst = linear_head_error(&uniform_flow(1.7), BoundaryHeads::default());
    assert!(worst < 1e-6, "max head error {worst}");
}

#[test]
fn heads_do_not_depend_on_k_scale_without_wells() {
    let grid = GridSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = simulate_field(&grid, &PriorSpec::default(), 1.6, 5, &mut rng).unwrap();
    let mut scaled = f.clone();
    for v in scaled.log10k.as_mut_slice() {
        *v += 1.0;
    }
    let params = FlowParams::default();
    let a = solve_steady_flow(&f, None, BoundaryHeads::default(), &params).unwrap();
    let b = solve_steady_flow(&scaled, None, BoundaryHeads::default(), &params).unwrap();
    let diff = a.heads.as_slice().iter().zip(b.heads.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-6, "head difference {diff}");
}

/// Net boundary inflow summed directly from the stored face velocities.
fn summed_boundary_flux(sol: &FlowSolution) -> f64 {
    let g = &sol.grid;
    let area = g.cell_dy * sol.thickness;
    (0..g.n_rows).map(|r| (sol.qx.at(r, 0) - sol.qx.at(r, g.n_cols)) * area).sum()
}

#[test]
fn generated_realizations_conserve_mass() {
    let cfg = ScenarioConfig::default();
    let rate = cfg.wells.pumping.rate.abs();
    let hi = cfg.boundary.east_head.max(cfg.boundary.west_head);
    for index in 0..4 {
        let field = realize_field(&cfg, index).unwrap();
        let sol = solve_flow(&cfg, &field).unwrap();
        let residual = summed_boundary_flux(&sol) + sol.well_rate;
        assert!(residual.abs() <= 1e-6 * rate, "record {index}: residual {residual}");
        assert!((residual - sol.mass_balance_residual).abs() <= 1e-9 * rate);
        let worst = sol.cell_balances().as_slice().iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-6 * rate, "record {index}: worst cell imbalance {worst}");
        // no source can raise heads above the highest boundary head
        assert!(sol.heads.as_slice().iter().all(|&h| h <= hi + 1e-9));
    }
}

#[test]
fn uniform_breakthrough_matches_ade_solution() {
    let r = ade_report();
    assert!(r.worst <= 0.05 * r.peak, "max deviation {} vs peak {}", r.worst, r.peak);
}

#[test]
fn doubling_particles_stays_within_noise_floor() {
    let sol = uniform_flow(1.7);
    let base = TransportParams { n_particles_transport: 4000, sim_duration: 150.0, n_bins: 30, max_step: 0.2, ..Default::default() };
    let double = TransportParams { n_particles_transport: 8000, ..base.clone() };
    let l2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let (mut floor, mut change) = (0.0, 0.0);
    for rep in 0..6u64 {
        let a = plane_curve(&sol, &base, 100 + rep, 20.0);
        let b = plane_curve(&sol, &base, 200 + rep, 20.0);
        let c = plane_curve(&sol, &double, 300 + rep, 20.0);
        floor += l2(&a, &b);
        change += l2(&a, &c);
    }
    assert!(change < floor, "change {change} vs seed-to-seed floor {floor}");
}
