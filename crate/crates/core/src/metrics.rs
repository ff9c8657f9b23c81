//! Data-utility metrics: modified Hausdorff distance between contours, SSIM
//! between signed-distance images, and standardization.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::raster::{Point, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Modified Hausdorff distance between zero contours (lower is better).
    Mhd,
    /// Negated SSIM between SD images (lower is better).
    #[serde(rename = "negssim")]
    NegSsim,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mhd => "mhd",
            Metric::NegSsim => "negssim",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mhd" => Ok(Metric::Mhd),
            "ssim" | "negssim" => Ok(Metric::NegSsim),
            other => invalid(format!("unknown metric '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub raw: f64,
    pub metric: Metric,
    pub standardized: Option<f64>,
}

/// Mean over `a` of the distance to the nearest point of `b`. `b` is sorted
/// by x so the scan around each query stops once the x gap alone exceeds the
/// best distance found; the result is the exact minimum.
fn directed_mean_min(a: &[Point], b: &[Point]) -> f64 {
    let mut sorted: Vec<Point> = b.to_vec();
    sorted.sort_by(|p, q| p.x.total_cmp(&q.x));
    let mut acc = 0.0;
    for p in a {
        let start = sorted.partition_point(|q| q.x < p.x);
        let mut best = f64::INFINITY;
        for q in &sorted[start..] {
            let dx = q.x - p.x;
            if dx * dx >= best {
                break;
            }
            best = best.min(p.dist2(*q));
        }
        for q in sorted[..start].iter().rev() {
            let dx = p.x - q.x;
            if dx * dx >= best {
                break;
            }
            best = best.min(p.dist2(*q));
        }
        acc += best.sqrt();
    }
    acc / a.len() as f64
}

/// Modified Hausdorff distance: the larger of the two directed mean
/// nearest-neighbour distances.
pub fn mhd(p1: &[Point], p2: &[Point]) -> Result<f64> {
    if p1.is_empty() || p2.is_empty() {
        return invalid("modified Hausdorff distance needs two non-empty point sets");
    }
    Ok(directed_mean_min(p1, p2).max(directed_mean_min(p2, p1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    pub window: usize,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { k1: 0.01, k2: 0.03, window: 7 }
    }
}

struct Integral {
    cols: usize,
    data: Vec<f64>,
}

impl Integral {
    fn new(rows: usize, cols: usize, f: impl Fn(usize) -> f64) -> Self {
        let w = cols + 1;
        let mut data = vec![0.0; (rows + 1) * w];
        for r in 0..rows {
            let mut row_sum = 0.0;
            for c in 0..cols {
                row_sum += f(r * cols + c);
                data[(r + 1) * w + c + 1] = data[r * w + c + 1] + row_sum;
            }
        }
        Integral { cols: w, data }
    }

    fn window(&self, r: usize, c: usize, n: usize) -> f64 {
        let w = self.cols;
        self.data[(r + n) * w + c + n] - self.data[r * w + c + n] - self.data[(r + n) * w + c] + self.data[r * w + c]
    }
}

/// Mean structural similarity over all fully contained `window x window`
/// uniform windows, with sample (co)variances. The dynamic range is the
/// joint max minus min of both images.
pub fn ssim_with(im1: &Raster<f64>, im2: &Raster<f64>, params: &SsimParams) -> Result<f64> {
    if im1.rows() != im2.rows() || im1.cols() != im2.cols() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", im1.rows(), im1.cols()),
            actual: format!("{}x{}", im2.rows(), im2.cols()),
        });
    }
    let (rows, cols) = (im1.rows(), im1.cols());
    let n = params.window;
    if n < 2 || rows < n || cols < n {
        return invalid(format!("images of {rows}x{cols} are smaller than the {n}x{n} SSIM window"));
    }
    let a = im1.as_slice();
    let b = im2.as_slice();
    let (lo, hi) = a.iter().chain(b).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range == 0.0 {
        return if a == b { Ok(1.0) } else { invalid("zero dynamic range with differing images") };
    }
    let c1 = (params.k1 * range).powi(2);
    let c2 = (params.k2 * range).powi(2);
    let sa = Integral::new(rows, cols, |i| a[i]);
    let sb = Integral::new(rows, cols, |i| b[i]);
    let saa = Integral::new(rows, cols, |i| a[i] * a[i]);
    let sbb = Integral::new(rows, cols, |i| b[i] * b[i]);
    let sab = Integral::new(rows, cols, |i| a[i] * b[i]);
    let np = (n * n) as f64;
    let cov_norm = np / (np - 1.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=(rows - n) {
        for c in 0..=(cols - n) {
            let mx = sa.window(r, c, n) / np;
            let my = sb.window(r, c, n) / np;
            let vx = cov_norm * (saa.window(r, c, n) / np - mx * mx);
            let vy = cov_norm * (sbb.window(r, c, n) / np - my * my);
            let vxy = cov_norm * (sab.window(r, c, n) / np - mx * my);
            let num = (2.0 * mx * my + c1) * (2.0 * vxy + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn ssim(im1: &Raster<f64>, im2: &Raster<f64>) -> Result<f64> {
    ssim_with(im1, im2, &SsimParams::default())
}

/// `(x - mean) / std` with the population standard deviation. A constant
/// input maps to all zeros and is flagged.
pub fn standardize(values: &[f64]) -> Result<(Vec<f64>, bool)> {
    if values.len() < 2 {
        return invalid("standardization needs at least two values");
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || std <= 1e-300 {
        return Ok((vec![0.0; values.len()], true));
    }
    Ok((values.iter().map(|v| (v - mean) / std).collect(), false))
}
