use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cca::{fit_cca, CcaModel};
use super::pca::{fit_pca, PcaBasis, Retain};
use super::posterior::{condition, fit_posterior_terms, sample_posterior, PosteriorTerms};
use super::yeo_johnson::{normalize_fit_apply, Normalizer};
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::geometry::{extract_zero_contour, SdImage, SubgridSpec};
use crate::raster::Point;

pub const MODEL_MAGIC: &[u8; 8] = b"WHPABEL\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BelConfig {
    pub retain_d: Retain,
    pub retain_h: Retain,
}

impl Default for BelConfig {
    fn default() -> Self {
        BelConfig { retain_d: Retain::Count(50), retain_h: Retain::Count(30) }
    }
}

/// What the predictor and target rows are, independent of their values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Zero-based injector indices whose curves are concatenated, in order.
    pub wells: Vec<usize>,
    /// Time steps per curve.
    pub k: usize,
    pub sub: SubgridSpec,
    pub training_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BelModel {
    pub meta: TrainingMeta,
    pub n_train: usize,
    pub pca_d: PcaBasis,
    pub pca_h: PcaBasis,
    pub cca: CcaModel,
    pub norm_d: Normalizer,
    pub norm_h: Normalizer,
    pub terms: PosteriorTerms,
}

/// Fit the full chain on predictor rows `d` (`n x wells*k`) and SD-image
/// rows `h` (`n x rows*cols`).
pub fn fit_bel(d: &DMatrix<f64>, h: &DMatrix<f64>, meta: TrainingMeta, cfg: &BelConfig) -> Result<BelModel> {
    if h.ncols() != meta.sub.n_cells() {
        return Err(Error::ShapeMismatch { expected: meta.sub.n_cells().to_string(), actual: h.ncols().to_string() });
    }
    let pca_h = fit_pca(h, cfg.retain_h)?;
    let h_scores = pca_h.project(h);
    fit_bel_with_target(d, &pca_h, &h_scores, meta, cfg.retain_d)
}

/// Same as [`fit_bel`] with a target basis fitted elsewhere on the same rows.
/// Lets several single-well models share one target PCA.
pub fn fit_bel_with_target(
    d: &DMatrix<f64>,
    pca_h: &PcaBasis,
    h_scores: &DMatrix<f64>,
    meta: TrainingMeta,
    retain_d: Retain,
) -> Result<BelModel> {
    let n = d.nrows();
    let expected = meta.wells.len() * meta.k;
    if d.ncols() != expected {
        return Err(Error::ShapeMismatch { expected: expected.to_string(), actual: d.ncols().to_string() });
    }
    if h_scores.nrows() != n {
        return Err(Error::ShapeMismatch { expected: format!("{n} target rows"), actual: h_scores.nrows().to_string() });
    }
    let pca_d = fit_pca(d, retain_d)?;
    let d_scores = pca_d.project(d);
    let need = pca_d.retained.max(pca_h.retained);
    if n <= need {
        return Err(Error::TooFewSamples { required: need, actual: n });
    }
    let cca = fit_cca(&d_scores, h_scores)?;
    let (norm_d, dn) = normalize_fit_apply(&cca.x_variates(&d_scores))?;
    let (norm_h, hn) = normalize_fit_apply(&cca.y_variates(h_scores))?;
    let terms = fit_posterior_terms(&hn, &dn)?;
    Ok(BelModel { meta, n_train: n, pca_d, pca_h: pca_h.clone(), cca, norm_d, norm_h, terms })
}

impl BelModel {
    pub fn eta(&self) -> usize {
        self.cca.eta()
    }

    pub fn predictor_len(&self) -> usize {
        self.meta.wells.len() * self.meta.k
    }

    /// Predictor row -> normalized canonical variates.
    pub fn observation_variates(&self, d_obs: &[f64]) -> Result<DVector<f64>> {
        if d_obs.len() != self.predictor_len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values ({} wells x {} steps)", self.predictor_len(), self.meta.wells.len(), self.meta.k),
                actual: d_obs.len().to_string(),
            });
        }
        if d_obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("observation contains non-finite values".into()));
        }
        let scores = self.pca_d.project_row(d_obs);
        Ok(self.norm_d.apply_vec(&self.cca.x_variates_row(&scores)))
    }

    pub fn posterior(&self, d_obs: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        condition(&self.terms, &self.observation_variates(d_obs)?)
    }

    /// Normalized target variates (`m x eta`) -> SD images as rows (`m x p`).
    pub fn backtransform(&self, samples_c: &DMatrix<f64>) -> DMatrix<f64> {
        let hc = self.norm_h.invert(samples_c);
        self.pca_h.reconstruct(&self.cca.y_backproject(&hc))
    }

    pub fn predict<R: Rng + ?Sized>(&self, d_obs: &[f64], zeta: usize, rng: &mut R) -> Result<PosteriorEnsemble> {
        if zeta < 2 {
            return Err(Error::InvalidInput("posterior ensemble needs at least 2 samples".into()));
        }
        let (mu, sigma) = self.posterior(d_obs)?;
        let samples = sample_posterior(&mu, &sigma, zeta, rng)?;
        Ok(PosteriorEnsemble {
            sub: self.meta.sub.clone(),
            images: self.backtransform(&samples),
            model_fingerprint: self.fingerprint(),
            observation_fingerprint: Fingerprint::new().f64s(d_obs).hex(),
        })
    }

    /// SD image of the backtransformed posterior mean.
    pub fn predict_mean_image(&self, d_obs: &[f64]) -> Result<SdImage> {
        let (mu, _) = self.posterior(d_obs)?;
        let img = self.backtransform(&DMatrix::from_row_slice(1, mu.len(), mu.as_slice()));
        Ok(SdImage::from_flat(self.meta.sub.clone(), img.row(0).iter().copied().collect()))
    }

    /// The target's reconstruction from the retained target components.
    pub fn target_reconstruction(&self, h_row: &[f64]) -> SdImage {
        let scores = self.pca_h.project_row(h_row);
        let rec = self.pca_h.reconstruct(&DMatrix::from_row_slice(1, scores.len(), scores.as_slice()));
        SdImage::from_flat(self.meta.sub.clone(), rec.row(0).iter().copied().collect())
    }

    pub fn fingerprint(&self) -> String {
        let bytes = bincode::serialize(self).expect("model serializes");
        Fingerprint::new().bytes(&bytes).hex()
    }

    /// Versioned binary container: magic, little-endian version, bincode body.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        bincode::serialize_into(&mut w, self).map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("not a BEL model file".into()));
        }
        let mut ver = [0u8; 4];
        r.read_exact(&mut ver)?;
        let ver = u32::from_le_bytes(ver);
        if ver != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {ver}")));
        }
        bincode::deserialize_from(r).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Posterior SD images, one per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEnsemble {
    pub sub: SubgridSpec,
    pub images: DMatrix<f64>,
    pub model_fingerprint: String,
    pub observation_fingerprint: String,
}

impl PosteriorEnsemble {
    pub fn zeta(&self) -> usize {
        self.images.nrows()
    }

    pub fn image(&self, i: usize) -> SdImage {
        SdImage::from_flat(self.sub.clone(), self.images.row(i).iter().copied().collect())
    }

    pub fn contours(&self) -> Vec<Vec<Point>> {
        (0..self.zeta()).map(|i| extract_zero_contour(&self.image(i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use rand_distr::StandardNormal;

    fn toy(n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>, TrainingMeta) {
        let sub = SubgridSpec { x_min: 0.0, x_max: 12.0, y_min: 0.0, y_max: 10.0, cell: 1.0 };
        let mut rng = StreamKey::root(seed).rng();
        let latent = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mix_d = DMatrix::from_fn(3, 8, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mix_h = DMatrix::from_fn(3, sub.n_cells(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = DMatrix::from_fn(n, 8, |_, _| 0.05 * rng.sample::<f64, _>(StandardNormal));
        let d = &latent * mix_d + noise;
        let h = &latent * mix_h;
        let meta = TrainingMeta { wells: vec![0, 1], k: 4, sub, training_fingerprint: "toy".into() };
        (d, h, meta)
    }

    fn cfg() -> BelConfig {
        BelConfig { retain_d: Retain::Count(5), retain_h: Retain::Count(3) }
    }

    #[test]
    fn training_target_round_trips_to_its_reconstruction() {
        let (d, h, meta) = toy(60, 1);
        let m = fit_bel(&d, &h, meta, &cfg()).unwrap();
        let hs = m.pca_h.project(&h);
        let forward = m.norm_h.apply(&m.cca.y_variates(&hs));
        let back = m.backtransform(&forward);
        let rec = m.pca_h.reconstruct(&hs);
        assert!((back - rec).amax() < 1e-6);
    }

    #[test]
    fn predictions_are_deterministic_and_shape_checked() {
        let (d, h, meta) = toy(60, 2);
        let m = fit_bel(&d, &h, meta, &cfg()).unwrap();
        let obs: Vec<f64> = d.row(0).iter().copied().collect();
        let a = m.predict(&obs, 10, &mut StreamKey::root(5).rng()).unwrap();
        let b = m.predict(&obs, 10, &mut StreamKey::root(5).rng()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.images.shape(), (10, 120));
        assert!(matches!(m.predict(&obs[..4], 10, &mut StreamKey::root(5).rng()), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn save_load_is_exact() {
        let (d, h, meta) = toy(40, 3);
        let m = fit_bel(&d, &h, meta, &cfg()).unwrap();
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = BelModel::load(&buf[..]).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.fingerprint(), back.fingerprint());
        buf[0] = b'X';
        assert!(BelModel::load(&buf[..]).is_err());
    }
}
