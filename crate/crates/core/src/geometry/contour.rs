use super::SdImage;
use crate::raster::Point;

/// Zero-level crossings of a signed-distance image.
///
/// Every pair of edge-adjacent cell centres whose values straddle zero
/// contributes one point, placed by linear interpolation along the edge
/// (the vertices of the marching-squares contour). Coordinates are physical.
/// Returns an empty list when the image has no sign change.
pub fn extract_zero_contour(sd: &SdImage) -> Vec<Point> {
    let v = &sd.values;
    let (rows, cols) = (v.rows(), v.cols());
    let mut out = Vec::new();
    let inside = |x: f64| x > 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let a = v.at(r, c);
            if c + 1 < cols {
                let b = v.at(r, c + 1);
                if inside(a) != inside(b) {
                    let t = a / (a - b);
                    out.push(sd.sub.from_index_space(r as f64, c as f64 + t));
                }
            }
            if r + 1 < rows {
                let b = v.at(r + 1, c);
                if inside(a) != inside(b) {
                    let t = a / (a - b);
                    out.push(sd.sub.from_index_space(r as f64 + t, c as f64));
                }
            }
        }
    }
    out
}

/// Bilinear interpolation of the image at a physical point, clamped to the
/// outermost cell centres.
pub fn sample_bilinear(sd: &SdImage, p: Point) -> f64 {
    let v = &sd.values;
    let (rows, cols) = (v.rows(), v.cols());
    let (fr, fc) = sd.sub.to_index_space(p);
    let fr = fr.clamp(0.0, (rows - 1) as f64);
    let fc = fc.clamp(0.0, (cols - 1) as f64);
    let r0 = (fr.floor() as usize).min(rows.saturating_sub(2));
    let c0 = (fc.floor() as usize).min(cols.saturating_sub(2));
    let r1 = (r0 + 1).min(rows - 1);
    let c1 = (c0 + 1).min(cols - 1);
    let tr = fr - r0 as f64;
    let tc = fc - c0 as f64;
    let top = v.at(r0, c0) * (1.0 - tc) + v.at(r0, c1) * tc;
    let bot = v.at(r1, c0) * (1.0 - tc) + v.at(r1, c1) * tc;
    top * (1.0 - tr) + bot * tr
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SubgridSpec;
    use crate::raster::Raster;

    #[test]
    fn strictly_positive_image_has_no_contour() {
        let sub = SubgridSpec { x_min: 0.0, x_max: 5.0, y_min: 0.0, y_max: 5.0, cell: 1.0 };
        let sd = SdImage { sub, values: Raster::filled(5, 5, 1.0) };
        assert!(extract_zero_contour(&sd).is_empty());
    }

    #[test]
    fn linear_field_crossings_are_exact() {
        let sub = SubgridSpec { x_min: 0.0, x_max: 10.0, y_min: 0.0, y_max: 4.0, cell: 1.0 };
        let vals: Vec<f64> = (0..4).flat_map(|_| (0..10).map(|c| 3.3 - (c as f64 + 0.5))).collect();
        let sd = SdImage::from_flat(sub, vals);
        let pts = extract_zero_contour(&sd);
        assert_eq!(pts.len(), 4);
        for p in pts {
            assert!((p.x - 3.3).abs() < 1e-12);
        }
        assert!((sample_bilinear(&sd, Point::new(3.3, 2.0))).abs() < 1e-12);
    }
}
