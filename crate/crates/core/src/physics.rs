//! Atomic constants, cloud configuration and the stochastic ladder-rate sampler.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// `π + 29/12`, the pair-averaged squared coupling of a uniform spherical cloud
/// in units of `Γ_a² / (κ_a R)²`.
pub const COUPLING_VARIANCE_CONSTANT: f64 = PI + 29.0 / 12.0;

/// Rb-87 D2 line: `Γ_a = 2π × 6.02 MHz`.
pub const RB87_D2_GAMMA: f64 = 2.0 * PI * 6.02e6;
/// Rb-87 D2 line wavelength (m).
pub const RB87_D2_LAMBDA: f64 = 780e-9;

/// Single-atom transition constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    /// Angular decay rate `Γ_a` (rad/s).
    pub gamma_a: f64,
    /// Transition wavelength `λ_a` (m).
    pub lambda_a: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            gamma_a: RB87_D2_GAMMA,
            lambda_a: RB87_D2_LAMBDA,
        }
    }
}

impl PhysicalParams {
    pub fn new(gamma_a: f64, lambda_a: f64) -> Result<Self, ConfigError> {
        let p = Self { gamma_a, lambda_a };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.gamma_a.is_finite() && self.gamma_a > 0.0) {
            return Err(ConfigError::field("phys.gamma_a", "must be finite and > 0"));
        }
        if !(self.lambda_a.is_finite() && self.lambda_a > 0.0) {
            return Err(ConfigError::field("phys.lambda_a", "must be finite and > 0"));
        }
        Ok(())
    }

    /// Wave number `κ_a = 2π/λ_a` (rad/m).
    pub fn kappa_a(&self) -> f64 {
        2.0 * PI / self.lambda_a
    }

    /// Excited-state lifetime `τ_a = 1/Γ_a` (s).
    pub fn tau_a(&self) -> f64 {
        1.0 / self.gamma_a
    }
}

/// How the uniform variates `ũ` of the rate correction are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSampling {
    /// One independent `ũ_M` per ladder level.
    #[default]
    PerLevel,
    /// A single `ũ` shared by every level of a realization.
    PerRealization,
}

fn default_clamp() -> bool {
    true
}

/// Cloud geometry, excitation and model shape factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudConfig {
    /// Total atom number.
    pub n_total: u64,
    /// Fraction of atoms promoted by the excitation pulse.
    pub f_exc: f64,
    /// Cloud radius `R` (m).
    pub radius: f64,
    /// Shape factor `ξ`.
    pub xi: f64,
    #[serde(default)]
    pub u_mode: RateSampling,
    #[serde(default = "default_clamp")]
    pub clamp_negative: bool,
}

impl CloudConfig {
    /// Nominal experimental cloud: 1.3 × 10⁶ atoms, half excited, R = 0.26 mm.
    pub fn nominal() -> Self {
        Self {
            n_total: 1_300_000,
            f_exc: 0.5,
            radius: 0.26e-3,
            xi: 1.0,
            u_mode: RateSampling::PerLevel,
            clamp_negative: true,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_total < 1 {
            return Err(ConfigError::field("cloud.n_total", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.f_exc) {
            return Err(ConfigError::field("cloud.f_exc", "must lie in [0, 1]"));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(ConfigError::field("cloud.radius", "must be finite and > 0"));
        }
        if !(self.xi.is_finite() && self.xi >= 0.0) {
            return Err(ConfigError::field("cloud.xi", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Number of initially excited atoms, `f_exc · n_total` rounded half to even.
    pub fn n_exc(&self) -> usize {
        let n = (self.f_exc * self.n_total as f64).round_ties_even() as usize;
        n.min(self.n_total as usize)
    }

    /// Dimensionless prefactor `ξ √(π + 29/12) / (κ_a R)` of the rate correction.
    pub fn c_coupling(&self, phys: &PhysicalParams) -> f64 {
        self.xi * COUPLING_VARIANCE_CONSTANT.sqrt() / (phys.kappa_a() * self.radius)
    }

    /// On-resonance optical depth of the whole cloud.
    pub fn od(&self, phys: &PhysicalParams) -> f64 {
        compute_od(self.n_total as f64, phys.kappa_a(), self.radius)
    }

    /// Radius giving optical depth `od` for this atom number.
    pub fn radius_for_od(n_total: u64, od: f64, phys: &PhysicalParams) -> f64 {
        (3.0 * n_total as f64 / od).sqrt() / phys.kappa_a()
    }
}

/// On-resonance optical depth `3N / (κ_a R)²`.
pub fn compute_od(n_total: f64, kappa_a: f64, radius: f64) -> f64 {
    let kr = kappa_a * radius;
    3.0 * n_total / (kr * kr)
}

/// Suppression of the scattering rate at detuning `delta` (in units of `Γ_a`)
/// relative to resonance, `(2Δ/Γ_a)²`.
pub fn off_resonant_factor(delta: f64) -> f64 {
    let x = 2.0 * delta;
    x * x
}

/// One sampled set of ladder decay rates `Γ_0 .. Γ_N` (1/s).
#[derive(Debug, Clone, PartialEq)]
pub struct RateRealization {
    pub rates: Vec<f64>,
    /// Number of levels whose sampled rate was negative and set to zero.
    pub clamped_count: usize,
    pub seed_tag: u64,
}

impl RateRealization {
    /// Uncorrelated decay, `Γ_M = M Γ_a`.
    pub fn independent(n_exc: usize, gamma_a: f64) -> Self {
        Self {
            rates: (0..=n_exc).map(|m| m as f64 * gamma_a).collect(),
            clamped_count: 0,
            seed_tag: 0,
        }
    }

    pub fn n_exc(&self) -> usize {
        self.rates.len() - 1
    }

    pub fn max_rate(&self) -> f64 {
        self.rates.iter().copied().fold(0.0, f64::max)
    }
}

/// Draws `Γ_M = Γ_a M [1 + c √(N − M) ũ_M]` for `M = 1..N`, with `Γ_0 = 0`.
///
/// `c` is [`CloudConfig::c_coupling`] and `ũ ~ U[−1, 1]`. The draw consumes
/// exactly one variate per level (PerLevel) or one in total (PerRealization), so
/// configurations sharing `c` and the stream produce identical rates.
pub fn sample_rates<R: Rng + ?Sized>(
    cloud: &CloudConfig,
    phys: &PhysicalParams,
    rng: &mut R,
    seed_tag: u64,
) -> RateRealization {
    let n = cloud.n_exc();
    let c = cloud.c_coupling(phys);
    let gamma_a = phys.gamma_a;
    let mut rates = Vec::with_capacity(n + 1);
    rates.push(0.0);
    let shared = match cloud.u_mode {
        RateSampling::PerRealization => Some(rng.random_range(-1.0..=1.0)),
        RateSampling::PerLevel => None,
    };
    let mut clamped_count = 0;
    for m in 1..=n {
        let u: f64 = match shared {
            Some(u) => u,
            None => rng.random_range(-1.0..=1.0),
        };
        let mf = m as f64;
        let correction = c * ((n - m) as f64).sqrt() * mf * u;
        let mut rate = gamma_a * (mf + correction);
        if cloud.clamp_negative && rate < 0.0 {
            rate = 0.0;
            clamped_count += 1;
        }
        rates.push(rate);
    }
    RateRealization {
        rates,
        clamped_count,
        seed_tag,
    }
}
