//! Scenario configuration, loaded from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bel::{BelConfig, Retain};
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::flow::{BoundaryHeads, FlowParams};
use crate::geometry::SubgridSpec;
use crate::metrics::{Metric, SsimParams};
use crate::prior::{GridSpec, PriorSpec, WellLayout};
use crate::transport::TransportParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct BacktrackParams {
    /// Number of particles released around the pumping well.
    pub n_particles: usize,
    /// Backtracking horizon (d).
    pub horizon: f64,
}

impl Default for BacktrackParams {
    fn default() -> Self {
        BacktrackParams { n_particles: 144, horizon: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct BelSettings {
    /// Equidistant time steps per breakthrough curve.
    pub k: usize,
    pub retain_d: Retain,
    pub retain_h: Retain,
    /// Posterior samples per prediction.
    pub zeta: usize,
}

impl Default for BelSettings {
    fn default() -> Self {
        BelSettings { k: 200, retain_d: Retain::Count(50), retain_h: Retain::Count(30), zeta: 400 }
    }
}

impl BelSettings {
    pub fn bel_config(&self) -> BelConfig {
        BelConfig { retain_d: self.retain_d, retain_h: self.retain_h }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct DesignSettings {
    pub folds: usize,
    pub metrics: Vec<Metric>,
    /// Posterior samples per prediction in the design loop.
    pub zeta: usize,
    pub size_study_sizes: Vec<usize>,
    pub size_study_targets: usize,
    pub ssim: SsimParams,
}

impl Default for DesignSettings {
    fn default() -> Self {
        DesignSettings {
            folds: 5,
            metrics: vec![Metric::Mhd, Metric::NegSsim],
            zeta: 400,
            size_study_sizes: vec![125, 250, 400, 650, 900],
            size_study_targets: 20,
            ssim: SsimParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub prior: PriorSpec,
    pub wells: WellLayout,
    pub boundary: BoundaryHeads,
    pub flow: FlowParams,
    pub transport: TransportParams,
    pub backtrack: BacktrackParams,
    pub subgrid: SubgridSpec,
    pub bel: BelSettings,
    pub design: DesignSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 20_210_601,
            grid: GridSpec::default(),
            prior: PriorSpec::default(),
            wells: WellLayout::default(),
            boundary: BoundaryHeads::default(),
            flow: FlowParams::default(),
            transport: TransportParams::default(),
            backtrack: BacktrackParams::default(),
            subgrid: SubgridSpec::default(),
            bel: BelSettings::default(),
            design: DesignSettings::default(),
        }
    }
}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Check every module precondition that can be checked before running.
    pub fn validate(&self) -> Result<()> {
        let wrap = |r: Result<()>, what: &str| r.map_err(|e| Error::Config(format!("{what}: {e}")));
        wrap(self.grid.validate(), "grid")?;
        wrap(self.prior.validate(), "prior")?;
        wrap(self.wells.validate(&self.grid), "wells")?;
        wrap(self.transport.validate(), "transport")?;
        wrap(self.subgrid.validate(), "subgrid")?;
        if (self.flow.porosity - self.transport.porosity).abs() > 0.0 {
            return cfg_err("flow.porosity and transport.porosity must match");
        }
        if self.backtrack.n_particles < 3 || !(self.backtrack.horizon > 0.0) {
            return cfg_err("backtrack needs at least 3 particles and a positive horizon");
        }
        if self.bel.k < 2 {
            return cfg_err("bel.k must be at least 2");
        }
        if self.bel.zeta < 2 || self.design.zeta < 2 {
            return cfg_err("zeta must be at least 2");
        }
        for r in [self.bel.retain_d, self.bel.retain_h] {
            match r {
                Retain::Count(0) => return cfg_err("retained component count must be positive"),
                Retain::Fraction(f) if !(f > 0.0 && f <= 1.0) => return cfg_err("variance fraction must lie in (0, 1]"),
                _ => {}
            }
        }
        if self.design.folds < 2 {
            return cfg_err("design.folds must be at least 2");
        }
        if self.design.metrics.is_empty() {
            return cfg_err("design.metrics must not be empty");
        }
        let s = &self.design.ssim;
        if s.window < 2 || s.window > self.subgrid.rows().min(self.subgrid.cols()) || !(s.k1 > 0.0) || !(s.k2 > 0.0) {
            return cfg_err("invalid SSIM parameters for this subgrid");
        }
        Ok(())
    }

    pub fn n_wells(&self) -> usize {
        self.wells.injectors.len()
    }

    /// Fingerprint of everything that determines generated records.
    pub fn data_fingerprint(&self) -> String {
        let data = serde_json::json!({
            "seed": self.seed,
            "grid": self.grid,
            "prior": self.prior,
            "wells": self.wells,
            "boundary": self.boundary,
            "flow": self.flow,
            "transport": self.transport,
            "backtrack": self.backtrack,
            "subgrid": self.subgrid,
            "k": self.bel.k,
        });
        Fingerprint::new().str(&data.to_string()).hex()
    }

    /// Fingerprint of the whole configuration.
    pub fn fingerprint(&self) -> String {
        Fingerprint::new().str(&serde_json::to_string(self).expect("config serializes")).hex()
    }
}
