//! Bayesian evidential learning: dimension reduction of predictor and
//! target, canonical correlation, normalization, Gaussian conditioning and
//! backtransformation to signed-distance images.

mod cca;
mod model;
mod pca;
mod posterior;
mod yeo_johnson;

pub use cca::{fit_cca, CcaModel};
pub use model::{fit_bel, fit_bel_with_target, BelConfig, BelModel, PosteriorEnsemble, TrainingMeta, MODEL_MAGIC, MODEL_VERSION};
pub use pca::{components_for_fraction, fit_pca, PcaBasis, Retain};
pub use posterior::{condition, fit_posterior_terms, sample_posterior, PosteriorTerms};
pub use yeo_johnson::{fit_lambda, normalize_fit_apply, yj_forward, yj_inverse, yj_log_likelihood, DimTransform, Normalizer};
