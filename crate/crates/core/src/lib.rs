//! Bayesian evidential learning of wellhead protection areas from tracer
//! breakthrough curves, and BEL-driven ranking of candidate injection wells.

pub mod bel;
pub mod config;
pub mod coverage;
pub mod dataset;
pub mod design;
pub mod error;
pub mod fingerprint;
pub mod flow;
pub mod geometry;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod prior;
pub mod raster;
pub mod rng;
pub mod transport;

pub use error::{Error, Result};
