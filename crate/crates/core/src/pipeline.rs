//! One forward record per realization: prior field, flow, tracer curves,
//! backtracked WHPA and its signed-distance image.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::flow::{solve_steady_flow, FlowSolution};
use crate::geometry::{order_endpoints_tsp, rasterize, signed_distance};
use crate::prior::{condition_wells, sample_prior_mean, simulate_field, HydraulicField};
use crate::raster::Point;
use crate::rng::{Purpose, StreamKey};
use crate::transport::{backtrack_particles, resample_curve, simulate_tracer};

/// Per-record numbers kept for diagnostics, not used by the learning.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordDiagnostics {
    pub sampled_mean: f64,
    pub range: f64,
    pub mass_balance_residual: f64,
    pub tour_length: f64,
    pub n_clamped: usize,
    /// Captured over injected mass, per injector.
    pub recovery: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub index: u64,
    pub field_seed: u64,
    pub valid: bool,
    /// `n_wells * k` resampled concentrations (kg/m^3), well-major.
    pub curves: Vec<f64>,
    pub endpoints: Vec<Point>,
    pub binary: Vec<u8>,
    pub sd: Vec<f64>,
    pub diag: RecordDiagnostics,
}

impl Record {
    /// Placeholder for a realization whose generation failed.
    pub fn invalid(cfg: &ScenarioConfig, index: u64) -> Self {
        let p = cfg.subgrid.n_cells();
        Record {
            index,
            field_seed: record_key(cfg, index).value(),
            valid: false,
            curves: vec![0.0; cfg.n_wells() * cfg.bel.k],
            endpoints: vec![Point::new(0.0, 0.0); cfg.backtrack.n_particles],
            binary: vec![0; p],
            sd: vec![0.0; p],
            diag: RecordDiagnostics { recovery: vec![0.0; cfg.n_wells()], ..Default::default() },
        }
    }

    pub fn curve(&self, well: usize, k: usize) -> &[f64] {
        &self.curves[well * k..(well + 1) * k]
    }
}

pub fn record_key(cfg: &ScenarioConfig, index: u64) -> StreamKey {
    StreamKey::root(cfg.seed).child(index)
}

/// Prior sample for record `index`, conditioned at the well cells.
pub fn realize_field(cfg: &ScenarioConfig, index: u64) -> Result<HydraulicField> {
    let key = record_key(cfg, index);
    let mean = sample_prior_mean(&cfg.prior, &mut key.purpose(Purpose::PriorMean).rng());
    let field = simulate_field(&cfg.grid, &cfg.prior, mean, key.value(), &mut key.purpose(Purpose::Field).rng())?;
    condition_wells(&field, &cfg.wells.positions(), &cfg.prior, &mut key.purpose(Purpose::WellK).rng())
}

pub fn solve_flow(cfg: &ScenarioConfig, field: &HydraulicField) -> Result<FlowSolution> {
    solve_steady_flow(field, Some(&cfg.wells), cfg.boundary, &cfg.flow)
}

/// Run the whole forward chain for one realization.
pub fn generate_record(cfg: &ScenarioConfig, index: u64) -> Result<Record> {
    let key = record_key(cfg, index);
    let field = realize_field(cfg, index)?;
    let flow = solve_flow(cfg, &field)?;
    let tol = 1e-6 * cfg.wells.pumping.rate.abs();
    if flow.mass_balance_residual.abs() > tol {
        return Err(Error::Numerical(format!("flow mass balance residual {:e} exceeds {tol:e}", flow.mass_balance_residual)));
    }
    let k = cfg.bel.k;
    let mut curves = Vec::with_capacity(cfg.n_wells() * k);
    let mut recovery = Vec::with_capacity(cfg.n_wells());
    for j in 0..cfg.n_wells() {
        let mut rng = key.purpose(Purpose::Transport).child(j as u64).rng();
        let raw = simulate_tracer(&flow, &cfg.wells, j, &cfg.transport, &mut rng)?;
        let (v, flagged) = resample_curve(&raw.times, &raw.concentrations, k, cfg.transport.sim_duration);
        if flagged {
            log::warn!("record {index}: empty breakthrough curve for injector {}", j + 1);
        }
        recovery.push(raw.captured_mass / raw.injected_mass);
        curves.extend(v);
    }
    let ends = backtrack_particles(&flow, cfg.backtrack.n_particles, cfg.backtrack.horizon)?;
    let contour = order_endpoints_tsp(&ends.points)?;
    let img = rasterize(&contour.vertices, &cfg.subgrid)?;
    if img.outside {
        return Err(Error::Numerical("WHPA polygon misses the subgrid".into()));
    }
    let sd = signed_distance(&img, cfg.subgrid.cell)?;
    Ok(Record {
        index,
        field_seed: key.value(),
        valid: true,
        curves,
        endpoints: ends.points,
        binary: img.cells.into_vec(),
        sd: sd.values.into_vec(),
        diag: RecordDiagnostics {
            sampled_mean: field.sampled_mean,
            range: field.range,
            mass_balance_residual: flow.mass_balance_residual,
            tour_length: contour.tour_length,
            n_clamped: ends.clamped.len(),
            recovery,
        },
    })
}

/// Generate records `start..start + n` in parallel. Failures are logged and
/// produce invalid placeholder records; output order follows the index.
pub fn generate_records(cfg: &ScenarioConfig, start: u64, n: u64) -> Vec<Record> {
    (start..start + n)
        .into_par_iter()
        .map(|i| match generate_record(cfg, i) {
            Ok(r) => r,
            Err(e) => {
                log::error!("record {i} failed: {e}");
                Record::invalid(cfg, i)
            }
        })
        .collect()
}
