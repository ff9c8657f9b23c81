//! Steady two-dimensional confined flow.
//!
//! Cell-centred finite volumes with harmonic-mean face transmissivities,
//! fixed heads on the west and east edges, no-flow north and south. The
//! pumping well is a sink in the cell that contains it. The SPD system is
//! solved by conjugate gradients preconditioned with incomplete Cholesky.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::prior::{GridSpec, HydraulicField, WellLayout};
use crate::raster::{Point, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundaryHeads {
    pub west_head: f64,
    pub east_head: f64,
}

impl Default for BoundaryHeads {
    fn default() -> Self {
        BoundaryHeads { west_head: 0.0, east_head: -3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    /// Saturated thickness of the confined layer (m).
    pub thickness: f64,
    pub porosity: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams { thickness: 10.0, porosity: 0.25, tolerance: 1e-13, max_iterations: 20_000 }
    }
}

/// Steady flow solution. Face velocities are Darcy fluxes (m/d):
/// `qx` has shape `n_rows x (n_cols + 1)` (west edge of column c at index c),
/// `qy` has shape `(n_rows + 1) x n_cols` (south edge of row r at index r).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSolution {
    pub grid: GridSpec,
    pub heads: Raster<f64>,
    pub qx: Raster<f64>,
    pub qy: Raster<f64>,
    pub porosity: f64,
    pub thickness: f64,
    /// Net inflow through the fixed-head edges plus the well rate (m^3/d).
    pub mass_balance_residual: f64,
    pub boundary_inflow: f64,
    pub well_rate: f64,
    pub sink_cell: Option<(usize, usize)>,
    pub iterations: usize,
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

struct System {
    rows: usize,
    cols: usize,
    // Conductances to the east and north neighbours, and to the fixed-head edges.
    ce: Vec<f64>,
    cn: Vec<f64>,
    cw_bnd: Vec<f64>,
    ce_bnd: Vec<f64>,
    diag: Vec<f64>,
}

impl System {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (rows, cols) = (self.rows, self.cols);
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                let mut v = self.diag[i] * x[i];
                if c + 1 < cols {
                    v -= self.ce[i] * x[i + 1];
                }
                if c > 0 {
                    v -= self.ce[i - 1] * x[i - 1];
                }
                if r + 1 < rows {
                    v -= self.cn[i] * x[i + cols];
                }
                if r > 0 {
                    v -= self.cn[i - cols] * x[i - cols];
                }
                y[i] = v;
            }
        }
    }
}

/// Incomplete Cholesky IC(0) of the 5-point matrix; stores the diagonal of L.
struct Ic0 {
    ldiag: Vec<f64>,
}

impl Ic0 {
    fn new(sys: &System) -> Self {
        let (rows, cols) = (sys.rows, sys.cols);
        let mut ldiag = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                let mut d = sys.diag[i];
                if c > 0 {
                    let l = -sys.ce[i - 1] / ldiag[i - 1];
                    d -= l * l;
                }
                if r > 0 {
                    let l = -sys.cn[i - cols] / ldiag[i - cols];
                    d -= l * l;
                }
                ldiag[i] = if d > 0.0 { d.sqrt() } else { sys.diag[i].sqrt() };
            }
        }
        Ic0 { ldiag }
    }

    fn solve(&self, sys: &System, b: &[f64], z: &mut [f64]) {
        let (rows, cols) = (sys.rows, sys.cols);
        // L y = b
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                let mut v = b[i];
                if c > 0 {
                    v += sys.ce[i - 1] / self.ldiag[i - 1] * z[i - 1];
                }
                if r > 0 {
                    v += sys.cn[i - cols] / self.ldiag[i - cols] * z[i - cols];
                }
                z[i] = v / self.ldiag[i];
            }
        }
        // L^T x = y
        for r in (0..rows).rev() {
            for c in (0..cols).rev() {
                let i = r * cols + c;
                let mut v = z[i];
                if c + 1 < cols {
                    v += sys.ce[i] / self.ldiag[i] * z[i + 1];
                }
                if r + 1 < rows {
                    v += sys.cn[i] / self.ldiag[i] * z[i + cols];
                }
                z[i] = v / self.ldiag[i];
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve steady flow for a conductivity field. Pass `None` for `wells` to
/// solve without pumping.
pub fn solve_steady_flow(
    field: &HydraulicField,
    wells: Option<&WellLayout>,
    boundary: BoundaryHeads,
    params: &FlowParams,
) -> Result<FlowSolution> {
    let grid = &field.grid;
    if field.log10k.as_slice().iter().any(|v| !v.is_finite()) {
        return invalid("conductivity field contains non-finite values");
    }
    if !(params.porosity > 0.0 && params.porosity < 1.0) || !(params.thickness > 0.0) {
        return invalid("porosity must lie in (0, 1) and thickness be positive");
    }
    let (rows, cols) = (grid.n_rows, grid.n_cols);
    let n = rows * cols;
    let (dx, dy) = (grid.cell_dx, grid.cell_dy);
    let t: Vec<f64> = field.log10k.as_slice().iter().map(|v| 10f64.powf(*v) * params.thickness).collect();

    let mut ce = vec![0.0; n];
    let mut cn = vec![0.0; n];
    let mut cw_bnd = vec![0.0; n];
    let mut ce_bnd = vec![0.0; n];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                ce[i] = harmonic(t[i], t[i + 1]) * dy / dx;
            }
            if r + 1 < rows {
                cn[i] = harmonic(t[i], t[i + cols]) * dx / dy;
            }
        }
        cw_bnd[r * cols] = 2.0 * t[r * cols] * dy / dx;
        ce_bnd[r * cols + cols - 1] = 2.0 * t[r * cols + cols - 1] * dy / dx;
    }
    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let mut d = cw_bnd[i] + ce_bnd[i];
            if c + 1 < cols {
                d += ce[i];
            }
            if c > 0 {
                d += ce[i - 1];
            }
            if r + 1 < rows {
                d += cn[i];
            }
            if r > 0 {
                d += cn[i - cols];
            }
            diag[i] = d;
            rhs[i] = cw_bnd[i] * boundary.west_head + ce_bnd[i] * boundary.east_head;
        }
    }
    let mut sink_cell = None;
    let mut well_rate = 0.0;
    if let Some(w) = wells {
        let cell = grid
            .cell_of(w.pumping.position)
            .ok_or_else(|| Error::InvalidInput("pumping well outside grid".into()))?;
        rhs[cell.0 * cols + cell.1] += w.pumping.rate;
        sink_cell = Some(cell);
        well_rate = w.pumping.rate;
    }
    let sys = System { rows, cols, ce, cn, cw_bnd, ce_bnd, diag };

    // Initial guess: linear profile between the boundary heads.
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let x = ((i % cols) as f64 + 0.5) / cols as f64;
            boundary.west_head + (boundary.east_head - boundary.west_head) * x
        })
        .collect();
    let iterations = pcg(&sys, &rhs, &mut h, params.tolerance, params.max_iterations)?;

    // Face fluxes (m^3/d) and Darcy velocities.
    let mut qx = Raster::filled(rows, cols + 1, 0.0);
    let mut qy = Raster::filled(rows + 1, cols, 0.0);
    let face_area_x = dy * params.thickness;
    let face_area_y = dx * params.thickness;
    let mut boundary_inflow = 0.0;
    for r in 0..rows {
        let i0 = r * cols;
        let west = sys.cw_bnd[i0] * (boundary.west_head - h[i0]);
        qx.set(r, 0, west / face_area_x);
        let il = i0 + cols - 1;
        let east = sys.ce_bnd[il] * (h[il] - boundary.east_head);
        qx.set(r, cols, east / face_area_x);
        boundary_inflow += west - east;
        for c in 0..cols - 1 {
            let i = i0 + c;
            qx.set(r, c + 1, sys.ce[i] * (h[i] - h[i + 1]) / face_area_x);
        }
    }
    for r in 0..rows - 1 {
        for c in 0..cols {
            let i = r * cols + c;
            qy.set(r + 1, c, sys.cn[i] * (h[i] - h[i + cols]) / face_area_y);
        }
    }
    Ok(FlowSolution {
        grid: grid.clone(),
        heads: Raster::from_vec(rows, cols, h),
        qx,
        qy,
        porosity: params.porosity,
        thickness: params.thickness,
        mass_balance_residual: boundary_inflow + well_rate,
        boundary_inflow,
        well_rate,
        sink_cell,
        iterations,
    })
}

fn pcg(sys: &System, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize> {
    let n = b.len();
    let pre = Ic0::new(sys);
    let mut r = vec![0.0; n];
    sys.apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let bnorm = dot(b, b).sqrt().max(sys.diag.iter().fold(0.0f64, |a, &d| a.max(d)) * 1e-3);
    let mut z = vec![0.0; n];
    pre.solve(sys, &r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let rnorm = dot(&r, &r).sqrt();
        if rnorm <= tol * bnorm {
            return Ok(it);
        }
        sys.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        pre.solve(sys, &r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = dot(&r, &r).sqrt();
    if rnorm <= 1e3 * tol * bnorm {
        return Ok(max_iter);
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: rnorm / bnorm })
}

impl FlowSolution {
    /// Per-cell water balance (inflow minus outflow plus source), m^3/d.
    pub fn cell_balances(&self) -> Raster<f64> {
        let g = &self.grid;
        let ax = g.cell_dy * self.thickness;
        let ay = g.cell_dx * self.thickness;
        let mut out = Raster::filled(g.n_rows, g.n_cols, 0.0);
        for r in 0..g.n_rows {
            for c in 0..g.n_cols {
                let mut b = (self.qx.at(r, c) - self.qx.at(r, c + 1)) * ax + (self.qy.at(r, c) - self.qy.at(r + 1, c)) * ay;
                if self.sink_cell == Some((r, c)) {
                    b += self.well_rate;
                }
                out.set(r, c, b);
            }
        }
        out
    }

    /// Pore velocity at `p` by linear interpolation of the face velocities
    /// along each axis within the containing cell. Returns `None` outside the
    /// grid.
    pub fn pore_velocity(&self, p: Point) -> Option<(f64, f64)> {
        let g = &self.grid;
        let (r, c) = g.cell_of(p)?;
        let fx = (p.x / g.cell_dx - c as f64).clamp(0.0, 1.0);
        let fy = (p.y / g.cell_dy - r as f64).clamp(0.0, 1.0);
        let vx = (1.0 - fx) * self.qx.at(r, c) + fx * self.qx.at(r, c + 1);
        let vy = (1.0 - fy) * self.qy.at(r, c) + fy * self.qy.at(r + 1, c);
        Some((vx / self.porosity, vy / self.porosity))
    }
}
