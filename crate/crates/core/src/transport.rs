//! Tracer transport and particle backtracking over a steady flow field.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::flow::FlowSolution;
use crate::prior::{GridSpec, WellLayout};
use crate::raster::Point;

/// A steady 2-D pore-velocity field (m/d).
pub trait VelocityField {
    fn velocity(&self, p: Point) -> Option<(f64, f64)>;
    fn bounds(&self) -> (Point, Point);
}

impl VelocityField for FlowSolution {
    fn velocity(&self, p: Point) -> Option<(f64, f64)> {
        self.pore_velocity(p)
    }

    fn bounds(&self) -> (Point, Point) {
        (Point::new(0.0, 0.0), Point::new(self.grid.x_extent, self.grid.y_extent))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportParams {
    pub porosity: f64,
    pub alpha_l: f64,
    pub alpha_t: f64,
    pub n_particles_transport: usize,
    /// Length of the recorded breakthrough period (d).
    pub sim_duration: f64,
    /// Number of uniform time bins used to turn particle arrivals into a curve.
    pub n_bins: usize,
    /// Upper bound on the random-walk time step (d).
    pub max_step: f64,
    /// Fraction of a cell an advective step may cover.
    pub courant: f64,
}

impl Default for TransportParams {
    fn default() -> Self {
        TransportParams {
            porosity: 0.25,
            alpha_l: 3.0,
            alpha_t: 0.3,
            n_particles_transport: 5000,
            sim_duration: 100.0,
            n_bins: 100,
            max_step: 0.5,
            courant: 0.2,
        }
    }
}

impl TransportParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.porosity > 0.0 && self.porosity < 1.0) {
            return invalid("porosity must lie in (0, 1)");
        }
        if !(self.alpha_l > 0.0) || !(self.alpha_t > 0.0) {
            return invalid("dispersivities must be positive");
        }
        if self.n_particles_transport == 0 || self.n_bins == 0 || !(self.sim_duration > 0.0) {
            return invalid("particle count, bin count and duration must be positive");
        }
        if !(self.max_step > 0.0) || !(self.courant > 0.0) {
            return invalid("time-step controls must be positive");
        }
        Ok(())
    }
}

/// Where transported particles are counted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Capture {
    /// Particles entering this grid cell are removed and counted.
    Cell(usize, usize),
    /// Particles crossing `x = value` (in the positive direction) are counted.
    PlaneX(f64),
}

/// A tracer pulse released at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracerSource {
    pub position: Point,
    /// Total injected mass (kg).
    pub mass: f64,
    /// Release times are uniform over `[0, duration]` (d).
    pub duration: f64,
}

/// Concentration history at the capture location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCurve {
    pub times: Vec<f64>,
    pub concentrations: Vec<f64>,
    pub injected_mass: f64,
    pub captured_mass: f64,
    /// Mass lost through the grid boundary (kg).
    pub lost_mass: f64,
    pub particles_lost: usize,
}

/// Bin arrival times into a concentration curve.
///
/// `flow_rate` is the extraction rate (m^3/d, positive) dividing the captured
/// mass flux. The curve starts at `(0, 0)`, has one point per bin centre and
/// ends at `sim_duration` with the last bin value.
fn bin_arrivals(arrivals: &[f64], particle_mass: f64, flow_rate: f64, params: &TransportParams) -> (Vec<f64>, Vec<f64>) {
    let nb = params.n_bins;
    let width = params.sim_duration / nb as f64;
    let mut mass = vec![0.0; nb];
    for &t in arrivals {
        let b = ((t / width).floor() as usize).min(nb - 1);
        mass[b] += particle_mass;
    }
    let mut times = Vec::with_capacity(nb + 2);
    let mut conc = Vec::with_capacity(nb + 2);
    times.push(0.0);
    conc.push(0.0);
    for (b, m) in mass.iter().enumerate() {
        times.push((b as f64 + 0.5) * width);
        conc.push(m / (flow_rate * width));
    }
    times.push(params.sim_duration);
    conc.push(*conc.last().unwrap());
    (times, conc)
}

fn in_cell(grid: &GridSpec, p: Point, cell: (usize, usize)) -> bool {
    grid.cell_of(p) == Some(cell)
}

/// Random-walk particle tracking of a tracer pulse.
///
/// Advection follows the interpolated pore velocity; dispersion adds
/// independent Gaussian steps along and across the local flow direction with
/// variances `2 alpha_L |v| dt` and `2 alpha_T |v| dt`. Particles leaving the
/// grid are absorbed and counted as lost.
pub fn track_tracer<R: Rng + ?Sized>(
    flow: &FlowSolution,
    source: TracerSource,
    capture: Capture,
    flow_rate: f64,
    params: &TransportParams,
    rng: &mut R,
) -> Result<RawCurve> {
    params.validate()?;
    if !flow.grid.contains(source.position) {
        return invalid("tracer source outside grid");
    }
    if !(flow_rate > 0.0) {
        return invalid("capture flow rate must be positive");
    }
    let grid = &flow.grid;
    let n = params.n_particles_transport;
    let pm = source.mass / n as f64;
    let h = grid.cell_dx.min(grid.cell_dy);
    let mut arrivals = Vec::with_capacity(n);
    let mut lost = 0usize;
    // Porosity in the flow solution is authoritative for the velocity field;
    // rescale if the transport porosity differs.
    let vscale = flow.porosity / params.porosity;
    for _ in 0..n {
        let mut t = if source.duration > 0.0 { rng.gen_range(0.0..source.duration) } else { 0.0 };
        let mut p = source.position;
        while t < params.sim_duration {
            let captured = match capture {
                Capture::Cell(r, c) => in_cell(grid, p, (r, c)),
                Capture::PlaneX(x) => p.x >= x,
            };
            if captured {
                arrivals.push(t);
                break;
            }
            let Some((vx, vy)) = flow.pore_velocity(p) else {
                lost += 1;
                break;
            };
            let (vx, vy) = (vx * vscale, vy * vscale);
            let speed = vx.hypot(vy);
            let mut dt = params.max_step.min(params.sim_duration - t);
            if speed > 0.0 {
                dt = dt.min(params.courant * h / speed);
                // Keep the dispersive jump below a cell as well.
                dt = dt.min(params.courant * h * h / (2.0 * params.alpha_l * speed).max(f64::MIN_POSITIVE));
            }
            let (ux, uy) = if speed > 0.0 { (vx / speed, vy / speed) } else { (1.0, 0.0) };
            let zl: f64 = StandardNormal.sample(rng);
            let zt: f64 = StandardNormal.sample(rng);
            let sl = (2.0 * params.alpha_l * speed * dt).sqrt() * zl;
            let st = (2.0 * params.alpha_t * speed * dt).sqrt() * zt;
            p = Point::new(p.x + vx * dt + sl * ux - st * uy, p.y + vy * dt + sl * uy + st * ux);
            t += dt;
            if !grid.contains(p) {
                lost += 1;
                break;
            }
        }
    }
    let captured_mass = arrivals.len() as f64 * pm;
    let (times, concentrations) = bin_arrivals(&arrivals, pm, flow_rate, params);
    Ok(RawCurve {
        times,
        concentrations,
        injected_mass: source.mass,
        captured_mass,
        lost_mass: lost as f64 * pm,
        particles_lost: lost,
    })
}

/// Breakthrough curve at the pumping well for one injector.
pub fn simulate_tracer<R: Rng + ?Sized>(
    flow: &FlowSolution,
    wells: &WellLayout,
    injector_index: usize,
    params: &TransportParams,
    rng: &mut R,
) -> Result<RawCurve> {
    let inj = wells
        .injectors
        .get(injector_index)
        .ok_or_else(|| Error::InvalidInput(format!("no injector with index {injector_index}")))?;
    let cell = flow
        .sink_cell
        .ok_or_else(|| Error::InvalidInput("flow solution has no pumping well".into()))?;
    let source = TracerSource { position: inj.position, mass: inj.injected_mass(), duration: inj.injection_duration };
    track_tracer(flow, source, Capture::Cell(cell.0, cell.1), -wells.pumping.rate, params, rng)
}

/// Linear interpolation of a raw curve onto `k` equidistant times spanning
/// `[0, duration]`. Values outside the raw time span are held constant.
/// An empty curve yields zeros and `flagged = true`.
pub fn resample_curve(times: &[f64], values: &[f64], k: usize, duration: f64) -> (Vec<f64>, bool) {
    if times.is_empty() || times.len() != values.len() || k == 0 {
        return (vec![0.0; k], true);
    }
    let grid = time_grid(k, duration);
    let mut out = Vec::with_capacity(k);
    let mut j = 0;
    for &t in &grid {
        if t <= times[0] {
            out.push(values[0]);
            continue;
        }
        if t >= *times.last().unwrap() {
            out.push(*values.last().unwrap());
            continue;
        }
        while j + 1 < times.len() && times[j + 1] < t {
            j += 1;
        }
        let (t0, t1) = (times[j], times[j + 1]);
        if t1 == t {
            out.push(values[j + 1]);
        } else if t1 > t0 {
            let w = (t - t0) / (t1 - t0);
            out.push(values[j] + w * (values[j + 1] - values[j]));
        } else {
            out.push(values[j]);
        }
    }
    (out, false)
}

/// The `k` equidistant sample times `i * duration / (k - 1)`.
pub fn time_grid(k: usize, duration: f64) -> Vec<f64> {
    if k == 1 {
        return vec![0.0];
    }
    (0..k).map(|i| duration * i as f64 / (k - 1) as f64).collect()
}

/// Resample several curves and concatenate them into one predictor row of
/// length `curves.len() * k`.
pub fn resample_curves(curves: &[RawCurve], k: usize, duration: f64) -> (Vec<f64>, Vec<usize>) {
    let mut row = Vec::with_capacity(curves.len() * k);
    let mut flagged = Vec::new();
    for (i, c) in curves.iter().enumerate() {
        let (v, f) = resample_curve(&c.times, &c.concentrations, k, duration);
        if f {
            flagged.push(i);
        }
        row.extend(v);
    }
    (row, flagged)
}

/// Backtracked particle endpoints around the pumping well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSet {
    pub points: Vec<Point>,
    pub backtrack_horizon: f64,
    /// Indices of particles that hit the grid boundary and were clamped.
    pub clamped: Vec<usize>,
}

/// Release `b` particles on a circle of radius `radius` around `center` and
/// integrate them backwards through `field` for `horizon` days.
pub fn backtrack_from_ring<F: VelocityField + ?Sized>(field: &F, center: Point, radius: f64, b: usize, horizon: f64, tol: f64) -> EndpointSet {
    let mut points = Vec::with_capacity(b);
    let mut clamped = Vec::new();
    for i in 0..b {
        let a = 2.0 * std::f64::consts::PI * i as f64 / b as f64;
        let start = Point::new(center.x + radius * a.cos(), center.y + radius * a.sin());
        let (end, hit) = integrate_path(field, start, horizon, -1.0, tol);
        if hit {
            clamped.push(i);
        }
        points.push(end);
    }
    EndpointSet { points, backtrack_horizon: horizon, clamped }
}

/// WHPA endpoints for a solved flow field: ring of one cell width around the
/// centre of the pumping cell.
pub fn backtrack_particles(flow: &FlowSolution, b: usize, horizon: f64) -> Result<EndpointSet> {
    let (r, c) = flow.sink_cell.ok_or_else(|| Error::InvalidInput("flow solution has no pumping well".into()))?;
    let center = flow.grid.cell_center(r, c);
    let radius = flow.grid.cell_dx.max(flow.grid.cell_dy);
    Ok(backtrack_from_ring(flow, center, radius, b, horizon, 1e-4))
}

fn vel<F: VelocityField + ?Sized>(field: &F, p: Point, dir: f64) -> (f64, f64) {
    let (lo, hi) = field.bounds();
    let q = Point::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y));
    field.velocity(q).map(|(vx, vy)| (dir * vx, dir * vy)).unwrap_or((0.0, 0.0))
}

/// Adaptive Dormand-Prince (RK45) integration of `dx/dt = dir * v(x)` over
/// `duration`. Returns the endpoint and whether the path hit the boundary.
pub fn integrate_path<F: VelocityField + ?Sized>(field: &F, start: Point, duration: f64, dir: f64, tol: f64) -> (Point, bool) {
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let (lo, hi) = field.bounds();
    let mut p = start;
    let mut t = 0.0;
    let mut h = (duration / 100.0).max(1e-6);
    let mut hit = false;
    let mut steps = 0usize;
    while t < duration && steps < 200_000 {
        steps += 1;
        h = h.min(duration - t);
        let mut k = [(0.0, 0.0); 7];
        k[0] = vel(field, p, dir);
        for s in 1..7 {
            let mut x = p.x;
            let mut y = p.y;
            for (j, kj) in k.iter().enumerate().take(s) {
                x += h * A[s - 1][j] * kj.0;
                y += h * A[s - 1][j] * kj.1;
            }
            k[s] = vel(field, Point::new(x, y), dir);
        }
        let mut x5 = p.x;
        let mut y5 = p.y;
        let mut ex = 0.0;
        let mut ey = 0.0;
        for s in 0..7 {
            x5 += h * B5[s] * k[s].0;
            y5 += h * B5[s] * k[s].1;
            ex += h * (B5[s] - B4[s]) * k[s].0;
            ey += h * (B5[s] - B4[s]) * k[s].1;
        }
        let err = ex.hypot(ey);
        if err <= tol || h < 1e-8 {
            t += h;
            p = Point::new(x5, y5);
            if p.x < lo.x || p.x > hi.x || p.y < lo.y || p.y > hi.y {
                p = Point::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y));
                hit = true;
                break;
            }
        }
        let factor = if err == 0.0 { 4.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 4.0) };
        h *= factor;
    }
    (p, hit)
}
