//! Comparing a posterior ensemble with the prior and with a known truth.

use serde::{Deserialize, Serialize};

use crate::bel::PosteriorEnsemble;
use crate::geometry::{sample_bilinear, SdImage, SubgridSpec};
use crate::raster::Point;

/// Union of the interiors (`psi > 0`) of several SD images, as a cell mask.
pub fn envelope<'a>(n_cells: usize, images: impl IntoIterator<Item = &'a [f64]>) -> Vec<bool> {
    let mut mask = vec![false; n_cells];
    for img in images {
        for (m, &v) in mask.iter_mut().zip(img) {
            *m |= v > 0.0;
        }
    }
    mask
}

pub fn envelope_area(mask: &[bool], sub: &SubgridSpec) -> f64 {
    mask.iter().filter(|&&m| m).count() as f64 * sub.cell * sub.cell
}

pub fn ensemble_envelope(ens: &PosteriorEnsemble) -> Vec<bool> {
    let p = ens.sub.n_cells();
    let mut mask = vec![false; p];
    for row in ens.images.row_iter() {
        for (m, &v) in mask.iter_mut().zip(row.iter()) {
            *m |= v > 0.0;
        }
    }
    mask
}

/// Fraction of `points` inside at least one member's WHPA, where a point is
/// inside when the bilinearly interpolated signed distance is non-negative.
pub fn coverage(points: &[Point], ens: &PosteriorEnsemble) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let images: Vec<SdImage> = (0..ens.zeta()).map(|i| ens.image(i)).collect();
    let inside = points.iter().filter(|&&p| images.iter().any(|img| sample_bilinear(img, p) >= 0.0)).count();
    inside as f64 / points.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub zeta: usize,
    pub posterior_envelope_area: f64,
    pub prior_envelope_area: Option<f64>,
    pub truth_coverage: Option<f64>,
    pub model_fingerprint: String,
    pub observation_fingerprint: String,
}
