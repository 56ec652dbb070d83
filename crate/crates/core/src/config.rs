//! JSON run configurations and their resolution into [`EnsembleConfig`].
//!
//! Grid spans are given in lifetimes `τ_a`, the cloud size either as a
//! radius in metres or as an optical depth. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::{EnsembleConfig, Observable, DEFAULT_REALIZATIONS};
use crate::error::ConfigError;
use crate::ladder::{
    Integrator, SimGrid, DEFAULT_OUTPUT_SAMPLES, DEFAULT_SPAN_LIFETIMES, DEFAULT_WINDOW_EPS,
};
use crate::physics::{CloudConfig, PhysicalParams, RateSampling};
use crate::trace::DEFAULT_XI_BOUNDS;

fn default_clamp() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudSpec {
    pub n_total: u64,
    pub f_exc: f64,
    /// Cloud radius (m). Exactly one of `radius_m` and `od` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_m: Option<f64>,
    /// On-resonance optical depth `3N/(κ_a R)²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub od: Option<f64>,
    pub xi: f64,
    #[serde(default)]
    pub u_mode: RateSampling,
    #[serde(default = "default_clamp")]
    pub clamp_negative: bool,
}

impl CloudSpec {
    pub fn resolve(&self, phys: &PhysicalParams) -> Result<CloudConfig, ConfigError> {
        let radius = match (self.radius_m, self.od) {
            (Some(r), None) => r,
            (None, Some(od)) => {
                if !(od.is_finite() && od > 0.0) {
                    return Err(ConfigError::field("cloud.od", "must be finite and > 0"));
                }
                CloudConfig::radius_for_od(self.n_total, od, phys)
            }
            _ => return Err(ConfigError::field("cloud", "give exactly one of radius_m and od")),
        };
        let cloud = CloudConfig {
            n_total: self.n_total,
            f_exc: self.f_exc,
            radius,
            xi: self.xi,
            u_mode: self.u_mode,
            clamp_negative: self.clamp_negative,
        };
        cloud.validate().map_err(|e| match e {
            ConfigError::Field { field, reason } if field == "cloud.radius" => {
                ConfigError::field("cloud.radius_m", reason)
            }
            other => other,
        })?;
        Ok(cloud)
    }
}

fn default_span() -> f64 {
    DEFAULT_SPAN_LIFETIMES
}

fn default_samples() -> usize {
    DEFAULT_OUTPUT_SAMPLES
}

fn default_eps() -> f64 {
    DEFAULT_WINDOW_EPS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// End of the output grid in lifetimes.
    #[serde(default = "default_span")]
    pub t_max_tau: f64,
    /// Uniformly spaced output samples, both ends included.
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default = "default_eps")]
    pub active_window_eps: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            t_max_tau: DEFAULT_SPAN_LIFETIMES,
            n_samples: DEFAULT_OUTPUT_SAMPLES,
            integrator: Integrator::default(),
            active_window_eps: DEFAULT_WINDOW_EPS,
        }
    }
}

impl GridSpec {
    pub fn resolve(&self, phys: &PhysicalParams) -> Result<SimGrid, ConfigError> {
        if !(self.t_max_tau.is_finite() && self.t_max_tau > 0.0) {
            return Err(ConfigError::field("grid.t_max_tau", "must be finite and > 0"));
        }
        if self.n_samples < 2 {
            return Err(ConfigError::field("grid.n_samples", "must be >= 2"));
        }
        let grid = SimGrid::uniform(self.t_max_tau * phys.tau_a(), self.n_samples, self.integrator)
            .with_eps(self.active_window_eps);
        grid.validate()
            .map_err(|e| ConfigError::field("grid", e.to_string()))?;
        Ok(grid)
    }
}

fn default_realizations() -> u64 {
    DEFAULT_REALIZATIONS
}

/// Configuration of one ensemble run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub cloud: CloudSpec,
    #[serde(default)]
    pub phys: PhysicalParams,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_realizations")]
    pub n_realizations: u64,
    #[serde(default)]
    pub seed: u64,
    /// Search interval for `ξ` when fitting.
    #[serde(default = "default_bounds")]
    pub xi_bounds: (f64, f64),
}

fn default_bounds() -> (f64, f64) {
    DEFAULT_XI_BOUNDS
}

impl RunConfig {
    pub fn resolve(&self) -> Result<EnsembleConfig, ConfigError> {
        self.phys.validate()?;
        let config = EnsembleConfig {
            n_realizations: self.n_realizations,
            master_seed: self.seed,
            cloud: self.cloud.resolve(&self.phys)?,
            phys: self.phys,
            grid: self.grid.resolve(&self.phys)?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Per-point overrides of a sweep's base cloud.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub od: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_exc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_total: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: RunConfig,
    #[serde(default)]
    pub observable: Observable,
    pub points: Vec<SweepPoint>,
}

impl SweepConfig {
    /// One ensemble per point, all sharing the base seed.
    pub fn resolve(&self) -> Result<Vec<EnsembleConfig>, ConfigError> {
        if self.points.is_empty() {
            return Err(ConfigError::field("points", "must list at least one sweep point"));
        }
        self.points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut run = self.base.clone();
                let c = &mut run.cloud;
                if p.od.is_some() || p.radius_m.is_some() {
                    c.od = p.od;
                    c.radius_m = p.radius_m;
                }
                c.f_exc = p.f_exc.unwrap_or(c.f_exc);
                c.xi = p.xi.unwrap_or(c.xi);
                c.n_total = p.n_total.unwrap_or(c.n_total);
                run.resolve().map_err(|e| match e {
                    ConfigError::Field { field, reason } => {
                        ConfigError::field(format!("points[{i}].{field}"), reason)
                    }
                    other => other,
                })
            })
            .collect()
    }
}

pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ConfigError> {
    Ok(serde_json::from_str(text)?)
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_json(&text)
}
