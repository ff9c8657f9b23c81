//! Prior model of the aquifer: grid, variogram, log10-conductivity fields and
//! well conditioning.
//!
//! Fields are simulated by circulant embedding of the spherical covariance on
//! a periodic extension of the grid, which yields the same Gaussian law as
//! sequential Gaussian simulation at a fraction of the cost. A dense Cholesky
//! factorization is used when the embedding is not non-negative definite and
//! the grid is small enough.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::raster::{Point, Raster};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub x_extent: f64,
    pub y_extent: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub cell_dx: f64,
    pub cell_dy: f64,
}

impl GridSpec {
    pub fn new(x_extent: f64, y_extent: f64, n_rows: usize, n_cols: usize) -> Result<Self> {
        let g = GridSpec {
            x_extent,
            y_extent,
            n_rows,
            n_cols,
            cell_dx: x_extent / n_cols as f64,
            cell_dy: y_extent / n_rows as f64,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.x_extent > 0.0 && self.y_extent > 0.0 && self.cell_dx > 0.0 && self.cell_dy > 0.0;
        if !positive || self.n_rows == 0 || self.n_cols == 0 {
            return invalid("grid extents, counts and cell sizes must be positive");
        }
        let tol = 1e-9 * self.x_extent.max(self.y_extent);
        if (self.n_cols as f64 * self.cell_dx - self.x_extent).abs() > tol
            || (self.n_rows as f64 * self.cell_dy - self.y_extent).abs() > tol
        {
            return invalid("grid cell sizes inconsistent with extents");
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.x <= self.x_extent && p.y >= 0.0 && p.y <= self.y_extent
    }

    /// Cell `(row, col)` containing `p`; points on the far edges belong to the
    /// last row/column.
    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        if !self.contains(p) {
            return None;
        }
        let c = ((p.x / self.cell_dx).floor() as usize).min(self.n_cols - 1);
        let r = ((p.y / self.cell_dy).floor() as usize).min(self.n_rows - 1);
        Some((r, c))
    }

    pub fn cell_center(&self, r: usize, c: usize) -> Point {
        Point::new((c as f64 + 0.5) * self.cell_dx, (r as f64 + 0.5) * self.cell_dy)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::new(1500.0, 1000.0, 100, 150).expect("default grid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariogramStructure {
    Spherical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariogramSpec {
    pub structure: VariogramStructure,
    pub range_min: f64,
    pub range_max: f64,
    pub nugget: f64,
    pub sill: f64,
}

impl VariogramSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.nugget >= 0.0) || !(self.range_min > 0.0) || self.range_min > self.range_max || !(self.sill >= 0.0) {
            return invalid("variogram requires nugget >= 0, sill >= 0 and 0 < range_min <= range_max");
        }
        Ok(())
    }
}

/// Spherical covariance at lag `h` for the given sill and range.
pub fn spherical_covariance(h: f64, sill: f64, range: f64) -> f64 {
    if h >= range {
        0.0
    } else {
        let s = h / range;
        sill * (1.0 - 1.5 * s + 0.5 * s * s * s)
    }
}

/// Spherical semivariogram `sill - C(h)`.
pub fn spherical_variogram(h: f64, sill: f64, range: f64) -> f64 {
    sill - spherical_covariance(h, sill, range)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    /// Bounds of the field mean of log10(K), K in m/d.
    pub log10k_mean_bounds: (f64, f64),
    pub log10k_std: f64,
    /// Conductivity range assigned to well cells, in m/d.
    pub well_k_bounds: (f64, f64),
    pub variogram: VariogramSpec,
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.log10k_mean_bounds;
        let (ka, kb) = self.well_k_bounds;
        if !(a <= b) || !(ka <= kb) || !(ka > 0.0) {
            return invalid("prior bounds must be ordered and well K positive");
        }
        if !(self.log10k_std >= 0.0) {
            return invalid("log10k_std must be non-negative");
        }
        self.variogram.validate()
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            log10k_mean_bounds: (1.4, 2.0),
            log10k_std: 0.4,
            well_k_bounds: (100.0, 1000.0),
            variogram: VariogramSpec {
                structure: VariogramStructure::Spherical,
                range_min: 25.0,
                range_max: 100.0,
                nugget: 0.0,
                sill: 0.16,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydraulicField {
    pub grid: GridSpec,
    pub log10k: Raster<f64>,
    pub realization_seed: u64,
    pub sampled_mean: f64,
    /// Variogram range used for this realization (m).
    pub range: f64,
}

impl HydraulicField {
    pub fn conductivity(&self, r: usize, c: usize) -> f64 {
        10f64.powf(self.log10k.at(r, c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpingWell {
    pub position: Point,
    /// Volumetric rate in m^3/d, negative for extraction.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionWell {
    pub position: Point,
    pub rate: f64,
    /// Tracer mass loading in kg/d.
    pub mass_loading: f64,
    /// Injection duration in days.
    pub injection_duration: f64,
}

impl InjectionWell {
    pub fn injected_mass(&self) -> f64 {
        self.mass_loading * self.injection_duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WellLayout {
    pub pumping: PumpingWell,
    pub injectors: Vec<InjectionWell>,
}

impl WellLayout {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.injectors.is_empty() {
            return invalid("at least one injection well is required");
        }
        if !(self.pumping.rate < 0.0) {
            return invalid("pumping rate must be negative (extraction)");
        }
        for p in self.positions() {
            if !grid.contains(p) {
                return invalid(format!("well at ({}, {}) lies outside the grid", p.x, p.y));
            }
        }
        for inj in &self.injectors {
            if !(inj.mass_loading > 0.0) || !(inj.injection_duration > 0.0) {
                return invalid("injector mass loading and duration must be positive");
            }
        }
        Ok(())
    }

    /// Pumping well first, then injectors in order.
    pub fn positions(&self) -> Vec<Point> {
        std::iter::once(self.pumping.position).chain(self.injectors.iter().map(|i| i.position)).collect()
    }
}

impl Default for WellLayout {
    /// Pumping well at (1000, 500) with three injectors upstream (west) and
    /// three downstream (east), roughly 50 m away.
    fn default() -> Self {
        let inj = |x: f64, y: f64| InjectionWell {
            position: Point::new(x, y),
            rate: 24.0,
            mass_loading: 1.5,
            injection_duration: 2.0 / 24.0,
        };
        WellLayout {
            pumping: PumpingWell { position: Point::new(1000.0, 500.0), rate: -1000.0 },
            injectors: vec![
                inj(960.0, 540.0),
                inj(950.0, 500.0),
                inj(960.0, 460.0),
                inj(1040.0, 540.0),
                inj(1050.0, 500.0),
                inj(1040.0, 460.0),
            ],
        }
    }
}

/// Uniform draw of the field mean of log10(K).
pub fn sample_prior_mean<R: Rng + ?Sized>(prior: &PriorSpec, rng: &mut R) -> f64 {
    let (lo, hi) = prior.log10k_mean_bounds;
    if lo == hi {
        return lo;
    }
    rng.gen_range(lo..=hi)
}

/// Stationary Gaussian log10(K) field with the given mean.
///
/// The variogram range is drawn uniformly in `[range_min, range_max]` from
/// `rng` before the field itself.
pub fn simulate_field<R: Rng + ?Sized>(grid: &GridSpec, prior: &PriorSpec, mean: f64, seed: u64, rng: &mut R) -> Result<HydraulicField> {
    grid.validate()?;
    prior.validate()?;
    let vg = &prior.variogram;
    let range = if vg.range_min == vg.range_max { vg.range_min } else { rng.gen_range(vg.range_min..=vg.range_max) };
    let std = prior.log10k_std;
    let mut values = if std == 0.0 {
        vec![0.0; grid.n_cells()]
    } else {
        let sill = std * std;
        match circulant_embedding(grid, sill, range, rng) {
            Ok(v) => v,
            Err(e) if grid.n_cells() <= DENSE_LIMIT => {
                log::warn!("circulant embedding failed ({e}); using dense factorization");
                dense_gaussian(grid, sill, range, rng)?
            }
            Err(e) => return Err(e),
        }
    };
    for v in values.iter_mut() {
        *v += mean;
    }
    Ok(HydraulicField {
        grid: grid.clone(),
        log10k: Raster::from_vec(grid.n_rows, grid.n_cols, values),
        realization_seed: seed,
        sampled_mean: mean,
        range,
    })
}

const DENSE_LIMIT: usize = 4096;

fn fft2(buf: &mut [Complex<f64>], m: usize, n: usize, planner: &mut FftPlanner<f64>) {
    let row_fft = planner.plan_fft_forward(n);
    for row in buf.chunks_mut(n) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(m);
    let mut col = vec![Complex::new(0.0, 0.0); m];
    for j in 0..n {
        for i in 0..m {
            col[i] = buf[i * n + j];
        }
        col_fft.process(&mut col);
        for i in 0..m {
            buf[i * n + j] = col[i];
        }
    }
}

fn circulant_embedding<R: Rng + ?Sized>(grid: &GridSpec, sill: f64, range: f64, rng: &mut R) -> Result<Vec<f64>> {
    let mut planner = FftPlanner::new();
    let reach_r = (range / grid.cell_dy).ceil() as usize;
    let reach_c = (range / grid.cell_dx).ceil() as usize;
    let mut m = (2 * grid.n_rows).max(grid.n_rows + 2 * reach_r);
    let mut n = (2 * grid.n_cols).max(grid.n_cols + 2 * reach_c);
    for _attempt in 0..3 {
        let mut c = vec![Complex::new(0.0, 0.0); m * n];
        for i in 0..m {
            let di = i.min(m - i) as f64 * grid.cell_dy;
            for j in 0..n {
                let dj = j.min(n - j) as f64 * grid.cell_dx;
                c[i * n + j] = Complex::new(spherical_covariance(di.hypot(dj), sill, range), 0.0);
            }
        }
        fft2(&mut c, m, n, &mut planner);
        let max = c.iter().map(|z| z.re).fold(0.0f64, f64::max);
        let min = c.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        if min < -1e-6 * max {
            m *= 2;
            n *= 2;
            continue;
        }
        let scale = 1.0 / (m * n) as f64;
        let mut w: Vec<Complex<f64>> = c
            .iter()
            .map(|lam| {
                let s = (lam.re.max(0.0) * scale).sqrt();
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                Complex::new(s * a, s * b)
            })
            .collect();
        fft2(&mut w, m, n, &mut planner);
        let mut out = Vec::with_capacity(grid.n_cells());
        for r in 0..grid.n_rows {
            for col in 0..grid.n_cols {
                out.push(w[r * n + col].re);
            }
        }
        return Ok(out);
    }
    Err(Error::Numerical("circulant embedding is not non-negative definite".into()))
}

/// Dense Cholesky simulation; exact but O(N^3), only for small grids.
pub fn dense_gaussian<R: Rng + ?Sized>(grid: &GridSpec, sill: f64, range: f64, rng: &mut R) -> Result<Vec<f64>> {
    let n = grid.n_cells();
    let centers: Vec<Point> = (0..grid.n_rows)
        .flat_map(|r| (0..grid.n_cols).map(move |c| (r, c)))
        .map(|(r, c)| grid.cell_center(r, c))
        .collect();
    let mut cov = DMatrix::from_fn(n, n, |i, j| spherical_covariance(centers[i].dist(centers[j]), sill, range));
    for i in 0..n {
        cov[(i, i)] += 1e-10 * sill;
    }
    let chol = cov.cholesky().ok_or_else(|| Error::Numerical("dense covariance not positive definite".into()))?;
    let z = nalgebra::DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
    Ok((chol.l() * z).iter().copied().collect())
}

/// Overwrite every cell containing a well with log10 of a uniform draw in the
/// prior's well conductivity bounds. Cells hit by several wells are drawn once,
/// in the order of first appearance.
pub fn condition_wells<R: Rng + ?Sized>(
    field: &HydraulicField,
    wells: &[Point],
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<HydraulicField> {
    let mut seen = BTreeSet::new();
    let mut cells = Vec::new();
    for &w in wells {
        let cell = field
            .grid
            .cell_of(w)
            .ok_or_else(|| Error::InvalidInput(format!("well at ({}, {}) lies outside the grid", w.x, w.y)))?;
        if seen.insert(cell) {
            cells.push(cell);
        }
    }
    let mut out = field.clone();
    let (lo, hi) = prior.well_k_bounds;
    for (r, c) in cells {
        let k = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
        out.log10k.set(r, c, k.log10());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn degenerate_mean_interval() {
        let mut p = PriorSpec::default();
        p.log10k_mean_bounds = (1.7, 1.7);
        let mut rng = StreamKey::root(1).rng();
        assert_eq!(sample_prior_mean(&p, &mut rng), 1.7);
    }

    #[test]
    fn mean_draws_within_bounds() {
        let p = PriorSpec::default();
        let mut rng = StreamKey::root(2).rng();
        for _ in 0..1000 {
            let m = sample_prior_mean(&p, &mut rng);
            assert!((1.4..=2.0).contains(&m));
            let k = 10f64.powf(m);
            assert!((25.0..=100.0).contains(&k));
        }
    }

    #[test]
    fn zero_std_gives_constant_field() {
        let mut p = PriorSpec::default();
        p.log10k_std = 0.0;
        let g = GridSpec::new(200.0, 100.0, 10, 20).unwrap();
        let f = simulate_field(&g, &p, 1.6, 0, &mut StreamKey::root(3).rng()).unwrap();
        assert!(f.log10k.as_slice().iter().all(|&v| v == 1.6));
    }

    #[test]
    fn field_is_deterministic() {
        let p = PriorSpec::default();
        let g = GridSpec::default();
        let a = simulate_field(&g, &p, 1.6, 7, &mut StreamKey::root(7).rng()).unwrap();
        let b = simulate_field(&g, &p, 1.6, 7, &mut StreamKey::root(7).rng()).unwrap();
        assert_eq!(a, b);
        assert!(a.log10k.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dense_fallback_matches_variance() {
        let g = GridSpec::new(100.0, 100.0, 10, 10).unwrap();
        let mut rng = StreamKey::root(4).rng();
        let mut acc = 0.0;
        let reps = 400;
        for _ in 0..reps {
            let v = dense_gaussian(&g, 0.16, 50.0, &mut rng).unwrap();
            acc += v[55] * v[55];
        }
        let var = acc / reps as f64;
        assert!((var - 0.16).abs() < 0.16 * 0.25, "variance {var}");
    }

    #[test]
    fn conditioning_touches_only_well_cells() {
        let p = PriorSpec::default();
        let g = GridSpec::default();
        let f = simulate_field(&g, &p, 1.6, 0, &mut StreamKey::root(5).rng()).unwrap();
        let wells = WellLayout::default();
        let out = condition_wells(&f, &wells.positions(), &p, &mut StreamKey::root(6).rng()).unwrap();
        let well_cells: BTreeSet<_> = wells.positions().iter().map(|&w| g.cell_of(w).unwrap()).collect();
        for r in 0..g.n_rows {
            for c in 0..g.n_cols {
                if well_cells.contains(&(r, c)) {
                    let v = out.log10k.at(r, c);
                    assert!((2.0..=3.0).contains(&v));
                } else {
                    assert_eq!(out.log10k.at(r, c), f.log10k.at(r, c));
                }
            }
        }
    }

    #[test]
    fn conditioning_without_wells_is_noop() {
        let p = PriorSpec::default();
        let g = GridSpec::new(100.0, 100.0, 10, 10).unwrap();
        let f = simulate_field(&g, &p, 1.6, 0, &mut StreamKey::root(8).rng()).unwrap();
        let out = condition_wells(&f, &[], &p, &mut StreamKey::root(9).rng()).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn shared_cell_is_overwritten_once() {
        let p = PriorSpec::default();
        let g = GridSpec::new(100.0, 100.0, 10, 10).unwrap();
        let f = simulate_field(&g, &p, 1.6, 0, &mut StreamKey::root(8).rng()).unwrap();
        let two = [Point::new(41.0, 41.0), Point::new(49.0, 49.0)];
        let one = [Point::new(41.0, 41.0)];
        let a = condition_wells(&f, &two, &p, &mut StreamKey::root(10).rng()).unwrap();
        let b = condition_wells(&f, &one, &p, &mut StreamKey::root(10).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn well_outside_grid_rejected() {
        let p = PriorSpec::default();
        let g = GridSpec::new(100.0, 100.0, 10, 10).unwrap();
        let f = simulate_field(&g, &p, 1.6, 0, &mut StreamKey::root(8).rng()).unwrap();
        assert!(condition_wells(&f, &[Point::new(150.0, 5.0)], &p, &mut StreamKey::root(1).rng()).is_err());
    }
}
