//! WHPA geometry: endpoint ordering, rasterization, signed distance and
//! zero-contour extraction on a square-celled subgrid.

mod contour;
mod fmm;
mod tsp;

pub use contour::{extract_zero_contour, sample_bilinear};
pub use fmm::signed_distance;
pub use tsp::{nearest_neighbour_tour, or_opt, order_endpoints_tsp, tour_length, two_opt, WhpaContour};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::raster::{Point, Raster};

/// Focused square-celled subdomain on which WHPA images live. Row 0 is the
/// southern edge (`y_min`); column 0 is the western edge (`x_min`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubgridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub cell: f64,
}

impl Default for SubgridSpec {
    fn default() -> Self {
        SubgridSpec { x_min: 800.0, x_max: 1150.0, y_min: 300.0, y_max: 700.0, cell: 4.0 }
    }
}

impl SubgridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell > 0.0) || !(self.x_max > self.x_min) || !(self.y_max > self.y_min) {
            return invalid("subgrid requires positive cell size and ordered bounds");
        }
        if self.rows() == 0 || self.cols() == 0 {
            return invalid("subgrid smaller than one cell");
        }
        Ok(())
    }

    /// Whole cells that fit in the y extent.
    pub fn rows(&self) -> usize {
        ((self.y_max - self.y_min) / self.cell + 1e-9).floor() as usize
    }

    pub fn cols(&self) -> usize {
        ((self.x_max - self.x_min) / self.cell + 1e-9).floor() as usize
    }

    pub fn n_cells(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn center(&self, r: usize, c: usize) -> Point {
        Point::new(self.x_min + (c as f64 + 0.5) * self.cell, self.y_min + (r as f64 + 0.5) * self.cell)
    }

    /// Continuous (row, col) coordinates of a point, with cell centres at
    /// integer values.
    pub fn to_index_space(&self, p: Point) -> (f64, f64) {
        ((p.y - self.y_min) / self.cell - 0.5, (p.x - self.x_min) / self.cell - 0.5)
    }

    pub fn from_index_space(&self, r: f64, c: f64) -> Point {
        Point::new(self.x_min + (c + 0.5) * self.cell, self.y_min + (r + 0.5) * self.cell)
    }
}

/// 0/1 membership image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryImage {
    pub sub: SubgridSpec,
    pub cells: Raster<u8>,
    /// True when the polygon did not overlap the subgrid at all.
    pub outside: bool,
}

impl BinaryImage {
    pub fn count_inside(&self) -> usize {
        self.cells.as_slice().iter().filter(|&&v| v == 1).count()
    }

    pub fn has_both_phases(&self) -> bool {
        let n = self.count_inside();
        n > 0 && n < self.cells.len()
    }
}

/// Signed-distance image (m): positive inside, negative outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdImage {
    pub sub: SubgridSpec,
    pub values: Raster<f64>,
}

impl SdImage {
    pub fn from_flat(sub: SubgridSpec, values: Vec<f64>) -> Self {
        let (r, c) = (sub.rows(), sub.cols());
        SdImage { sub, values: Raster::from_vec(r, c, values) }
    }

    /// Area (m^2) of cells with positive signed distance.
    pub fn inside_area(&self) -> f64 {
        self.values.as_slice().iter().filter(|&&v| v > 0.0).count() as f64 * self.sub.cell * self.sub.cell
    }
}

/// Even-odd point in polygon test.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Cell = 1 iff its centre lies inside the closed polygon (even-odd rule).
pub fn rasterize(poly: &[Point], sub: &SubgridSpec) -> Result<BinaryImage> {
    sub.validate()?;
    if poly.len() < 3 {
        return invalid("polygon needs at least 3 vertices");
    }
    let (rows, cols) = (sub.rows(), sub.cols());
    let mut cells = Raster::filled(rows, cols, 0u8);
    // Scanline over cell-centre rows: collect edge crossings, then fill.
    let n = poly.len();
    let mut xs = Vec::new();
    for r in 0..rows {
        let y = sub.y_min + (r as f64 + 0.5) * sub.cell;
        xs.clear();
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (poly[i], poly[j]);
            if (a.y > y) != (b.y > y) {
                xs.push(a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x));
            }
            j = i;
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // Even-odd with a strict `p.x < x` test: centres in [x0, x1) are inside.
            let c0 = ((pair[0] - sub.x_min) / sub.cell - 0.5).ceil().max(0.0) as i64;
            let c1 = (((pair[1] - sub.x_min) / sub.cell - 0.5).ceil() as i64 - 1).min(cols as i64 - 1);
            for c in c0..=c1 {
                cells.set(r, c as usize, 1);
            }
        }
    }
    let outside = cells.as_slice().iter().all(|&v| v == 0) && !poly.iter().any(|p| {
        p.x >= sub.x_min && p.x <= sub.x_max && p.y >= sub.y_min && p.y <= sub.y_max
    });
    Ok(BinaryImage { sub: sub.clone(), cells, outside })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub() -> SubgridSpec {
        SubgridSpec { x_min: 0.0, x_max: 40.0, y_min: 0.0, y_max: 40.0, cell: 1.0 }
    }

    fn brute(poly: &[Point], sub: &SubgridSpec) -> Vec<u8> {
        let mut v = Vec::new();
        for r in 0..sub.rows() {
            for c in 0..sub.cols() {
                v.push(point_in_polygon(sub.center(r, c), poly) as u8);
            }
        }
        v
    }

    #[test]
    fn default_subgrid_shape() {
        let s = SubgridSpec::default();
        assert_eq!((s.rows(), s.cols()), (100, 87));
        assert_eq!(s.n_cells(), 8700);
    }

    #[test]
    fn covering_polygon_is_all_ones() {
        let s = sub();
        let poly = [Point::new(-5.0, -5.0), Point::new(50.0, -5.0), Point::new(50.0, 50.0), Point::new(-5.0, 50.0)];
        let img = rasterize(&poly, &s).unwrap();
        assert_eq!(img.count_inside(), s.n_cells());
    }

    #[test]
    fn aligned_rectangle_area() {
        let s = sub();
        let poly = [Point::new(3.0, 5.0), Point::new(13.0, 5.0), Point::new(13.0, 12.0), Point::new(3.0, 12.0)];
        let img = rasterize(&poly, &s).unwrap();
        assert_eq!(img.count_inside(), 70);
    }

    #[test]
    fn scanline_matches_point_in_polygon() {
        let s = sub();
        let poly = [
            Point::new(2.3, 3.1),
            Point::new(30.7, 5.5),
            Point::new(20.0, 20.5),
            Point::new(35.2, 36.9),
            Point::new(4.4, 30.0),
            Point::new(12.5, 15.5),
        ];
        let img = rasterize(&poly, &s).unwrap();
        assert_eq!(img.cells.as_slice(), brute(&poly, &s).as_slice());
    }

    #[test]
    fn polygon_outside_is_flagged() {
        let s = sub();
        let poly = [Point::new(100.0, 100.0), Point::new(110.0, 100.0), Point::new(105.0, 110.0)];
        let img = rasterize(&poly, &s).unwrap();
        assert!(img.outside);
        assert_eq!(img.count_inside(), 0);
    }
}
