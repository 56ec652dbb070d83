//! Integration of the decay ladder `dρ_M/dt = −Γ_M ρ_M + Γ_{M+1} ρ_{M+1}`.
//!
//! The system starts at the top level (`ρ_N = 1`) and drains towards the
//! absorbing ground level `M = 0`. Two schemes are provided:
//!
//! * [`Integrator::ImplicitTrapezoid`]: A-stable, second order, adaptive step
//!   chosen by step doubling. Each stage is a lower-bidiagonal solve done by
//!   forward substitution from the top of the active window.
//! * [`Integrator::Rk4`]: classical fixed-step Runge–Kutta, used to
//!   cross-check the implicit scheme at small ladder sizes.
//!
//! Only levels holding more than `active_window_eps` of probability are
//! updated. Mass falling out of the window is folded into the neighbouring
//! level inside it, so `Σρ` is conserved to round-off.

use serde::{Deserialize, Serialize};

use crate::error::LadderError;
use crate::physics::RateRealization;

/// Probability distribution over excitation numbers `M = 0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderState {
    pub rho: Vec<f64>,
    pub time: f64,
}

impl LadderState {
    /// Everything in the fully excited level.
    pub fn top(n_exc: usize) -> Self {
        let mut rho = vec![0.0; n_exc + 1];
        rho[n_exc] = 1.0;
        Self { rho, time: 0.0 }
    }

    pub fn total(&self) -> f64 {
        self.rho.iter().sum()
    }

    /// Stored energy `Σ M ρ_M` in quanta.
    pub fn energy(&self) -> f64 {
        self.rho.iter().enumerate().map(|(m, r)| m as f64 * r).sum()
    }

    /// Emitted power `Σ Γ_M ρ_M` in quanta per second.
    pub fn power(&self, rates: &[f64]) -> f64 {
        self.rho.iter().zip(rates).map(|(r, g)| r * g).sum()
    }
}

/// Time-stepping scheme and its accuracy controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Integrator {
    ImplicitTrapezoid {
        /// Relative error allowed on `E` and `P` per unit of their decay time.
        #[serde(default = "default_error_tol")]
        error_tol: f64,
        /// Relative error allowed on each level population per unit of the
        /// fastest decay time in the active window; `None` controls `E` and
        /// `P` only. Without it, chains whose moments are exactly exponential
        /// (ξ = 0) let the step grow until the stiff top levels ring.
        #[serde(default = "default_level_tol")]
        level_tol: Option<f64>,
    },
    Rk4 {
        /// Fixed internal step (s).
        dt_internal: f64,
    },
}

/// Default `error_tol` of the implicit scheme.
pub const DEFAULT_ERROR_TOL: f64 = 1e-3;
/// Default `level_tol` of the implicit scheme.
pub const DEFAULT_LEVEL_TOL: f64 = 1e-2;

fn default_error_tol() -> f64 {
    DEFAULT_ERROR_TOL
}

fn default_level_tol() -> Option<f64> {
    Some(DEFAULT_LEVEL_TOL)
}

impl Default for Integrator {
    fn default() -> Self {
        Self::trapezoid(DEFAULT_ERROR_TOL)
    }
}

impl Integrator {
    /// Adaptive trapezoid with the default per-level control.
    pub fn trapezoid(error_tol: f64) -> Self {
        Self::ImplicitTrapezoid {
            error_tol,
            level_tol: default_level_tol(),
        }
    }

    /// Adaptive trapezoid that controls every level population to `tol`.
    pub fn trapezoid_exact_levels(tol: f64) -> Self {
        Self::ImplicitTrapezoid {
            error_tol: tol,
            level_tol: Some(tol),
        }
    }
}

/// Default probability below which a level leaves the active window.
pub const DEFAULT_WINDOW_EPS: f64 = 1e-14;
/// Default number of output samples.
pub const DEFAULT_OUTPUT_SAMPLES: usize = 1024;
/// Default span of the output grid in lifetimes.
pub const DEFAULT_SPAN_LIFETIMES: f64 = 10.0;

const MAX_STEPS: usize = 50_000_000;
/// Relative error floor below which step doubling only sees round-off.
const ROUNDOFF: f64 = 256.0 * f64::EPSILON;

/// Output grid and integrator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimGrid {
    pub t_max: f64,
    /// Strictly increasing, starting at 0 and ending at most at `t_max`.
    pub output_times: Vec<f64>,
    pub integrator: Integrator,
    pub active_window_eps: f64,
    /// Keep the full population vector at every output time.
    pub snapshots: bool,
}

impl SimGrid {
    /// `n_samples` points spaced uniformly on `[0, t_max]`.
    pub fn uniform(t_max: f64, n_samples: usize, integrator: Integrator) -> Self {
        let n = n_samples.max(2);
        let output_times = (0..n)
            .map(|i| t_max * i as f64 / (n - 1) as f64)
            .collect();
        Self {
            t_max,
            output_times,
            integrator,
            active_window_eps: DEFAULT_WINDOW_EPS,
            snapshots: false,
        }
    }

    /// 1024 samples on `[0, 10 τ_a]` with the default implicit scheme.
    pub fn default_for(tau_a: f64) -> Self {
        Self::uniform(
            DEFAULT_SPAN_LIFETIMES * tau_a,
            DEFAULT_OUTPUT_SAMPLES,
            Integrator::default(),
        )
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.active_window_eps = eps;
        self
    }

    pub fn with_snapshots(mut self) -> Self {
        self.snapshots = true;
        self
    }

    pub fn validate(&self) -> Result<(), LadderError> {
        let bad = |s: &str| Err(LadderError::InvalidGrid(s.to_string()));
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return bad("t_max must be finite and > 0");
        }
        if self.output_times.first() != Some(&0.0) {
            return bad("output_times must start at 0");
        }
        if self.output_times.windows(2).any(|w| w[1] <= w[0]) {
            return bad("output_times must be strictly increasing");
        }
        if self.output_times.last().is_some_and(|&t| t > self.t_max) {
            return bad("output_times must lie within [0, t_max]");
        }
        if !(self.active_window_eps >= 0.0 && self.active_window_eps < 1e-3) {
            return bad("active_window_eps must lie in [0, 1e-3)");
        }
        match self.integrator {
            Integrator::ImplicitTrapezoid {
                error_tol,
                level_tol,
            } => {
                if !(error_tol.is_finite() && error_tol > 0.0) {
                    return bad("error_tol must be finite and > 0");
                }
                if level_tol.is_some_and(|l| !(l.is_finite() && l > 0.0)) {
                    return bad("level_tol must be finite and > 0");
                }
            }
            Integrator::Rk4 { dt_internal } => {
                if !(dt_internal.is_finite() && dt_internal > 0.0) {
                    return bad("dt_internal must be finite and > 0");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Largest active window seen, in levels.
    pub max_window: usize,
}

/// Stored energy and emitted power sampled on the output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `Σ M ρ_M` (quanta).
    pub energy: Vec<f64>,
    /// `Σ Γ_M ρ_M` (quanta/s).
    pub power: Vec<f64>,
    pub snapshots: Option<Vec<Vec<f64>>>,
    pub stats: StepStats,
}

/// Right-hand side of the ladder equations.
pub fn ladder_rhs(state: &LadderState, rates: &RateRealization) -> Result<Vec<f64>, LadderError> {
    if state.rho.len() != rates.rates.len() {
        return Err(LadderError::LengthMismatch {
            state: state.rho.len(),
            rates: rates.rates.len(),
        });
    }
    let n = state.rho.len() - 1;
    let g = &rates.rates;
    let rho = &state.rho;
    let mut d = vec![0.0; n + 1];
    for m in 0..=n {
        d[m] = -g[m] * rho[m];
        if m < n {
            d[m] += g[m + 1] * rho[m + 1];
        }
    }
    Ok(d)
}

/// Integrates from the top of the ladder.
pub fn integrate(rates: &RateRealization, grid: &SimGrid) -> Result<Trajectory, LadderError> {
    integrate_from(LadderState::top(rates.n_exc()), rates, grid)
}

/// Integrates from an arbitrary initial distribution at `t = 0`.
pub fn integrate_from(
    initial: LadderState,
    rates: &RateRealization,
    grid: &SimGrid,
) -> Result<Trajectory, LadderError> {
    grid.validate()?;
    if initial.rho.len() != rates.rates.len() {
        return Err(LadderError::LengthMismatch {
            state: initial.rho.len(),
            rates: rates.rates.len(),
        });
    }
    if let Some((level, &rate)) = rates
        .rates
        .iter()
        .enumerate()
        .find(|(_, g)| !(g.is_finite() && **g >= 0.0))
    {
        return Err(LadderError::NegativeRate { level, rate });
    }
    let ladder = Ladder::new(initial.rho, &rates.rates, grid.active_window_eps);
    match grid.integrator {
        Integrator::ImplicitTrapezoid {
            error_tol,
            level_tol,
        } => ladder.run_trapezoid(grid, error_tol, level_tol),
        Integrator::Rk4 { dt_internal } => {
            let bound = RK4_STABILITY / rates.max_rate();
            if dt_internal >= bound {
                return Err(LadderError::Unstable {
                    dt: dt_internal,
                    bound,
                });
            }
            ladder.run_rk4(grid, dt_internal)
        }
    }
}

/// Extent of the RK4 stability region on the negative real axis.
pub const RK4_STABILITY: f64 = 2.78;

struct Ladder<'a> {
    rates: &'a [f64],
    rho: Vec<f64>,
    lo: usize,
    hi: usize,
    eps: f64,
    stats: StepStats,
}

struct Recorder {
    energy: Vec<f64>,
    power: Vec<f64>,
    snapshots: Option<Vec<Vec<f64>>>,
}

impl<'a> Ladder<'a> {
    fn new(rho: Vec<f64>, rates: &'a [f64], eps: f64) -> Self {
        let n = rho.len() - 1;
        let hi = (0..=n).rev().find(|&m| rho[m] != 0.0).unwrap_or(0);
        let lo = (0..=hi).find(|&m| rho[m] != 0.0).unwrap_or(0);
        let mut ladder = Self {
            rates,
            rho,
            lo,
            hi,
            eps,
            stats: StepStats::default(),
        };
        ladder.trim();
        ladder
    }

    fn energy(&self) -> f64 {
        (self.lo..=self.hi).map(|m| m as f64 * self.rho[m]).sum()
    }

    fn power(&self) -> f64 {
        (self.lo..=self.hi).map(|m| self.rates[m] * self.rho[m]).sum()
    }

    /// Folds sub-threshold edge levels into their inner neighbour.
    fn trim(&mut self) {
        while self.hi > self.lo && self.rho[self.hi].abs() < self.eps {
            self.rho[self.hi - 1] += self.rho[self.hi];
            self.rho[self.hi] = 0.0;
            self.hi -= 1;
        }
        while self.lo < self.hi && self.rho[self.lo].abs() < self.eps {
            self.rho[self.lo + 1] += self.rho[self.lo];
            self.rho[self.lo] = 0.0;
            self.lo += 1;
        }
        self.stats.max_window = self.stats.max_window.max(self.hi - self.lo + 1);
    }

    fn record(&self, rec: &mut Recorder, time: f64) -> Result<(), LadderError> {
        let e = self.energy();
        let p = self.power();
        if !(e.is_finite() && p.is_finite()) {
            return Err(LadderError::NonFinite { time });
        }
        rec.energy.push(e);
        rec.power.push(p);
        if let Some(snaps) = rec.snapshots.as_mut() {
            let mut s = vec![0.0; self.rho.len()];
            for m in self.lo..=self.hi {
                s[m] = self.rho[m].max(0.0);
            }
            snaps.push(s);
        }
        Ok(())
    }

    fn recorder(grid: &SimGrid) -> Recorder {
        let n = grid.output_times.len();
        Recorder {
            energy: Vec::with_capacity(n),
            power: Vec::with_capacity(n),
            snapshots: grid.snapshots.then(|| Vec::with_capacity(n)),
        }
    }

    fn finish(self, grid: &SimGrid, rec: Recorder) -> Trajectory {
        Trajectory {
            times: grid.output_times.clone(),
            energy: rec.energy,
            power: rec.power,
            snapshots: rec.snapshots,
            stats: self.stats,
        }
    }

    fn run_trapezoid(
        mut self,
        grid: &SimGrid,
        error_tol: f64,
        level_tol: Option<f64>,
    ) -> Result<Trajectory, LadderError> {
        let mut rec = Self::recorder(grid);
        self.record(&mut rec, 0.0)?;
        let n = self.rho.len();
        let mut full = vec![0.0; n];
        let mut mid = vec![0.0; n];
        let mut half = vec![0.0; n];
        let max_rate = self.rates[self.lo..=self.hi]
            .iter()
            .copied()
            .fold(0.0, f64::max);
        // E and P differences below what the window truncation already
        // discards are not resolved
        let floors = (
            self.eps * (n - 1) as f64,
            self.eps * self.rates.iter().copied().fold(0.0, f64::max),
        );
        let mut h = if max_rate > 0.0 {
            0.01 / max_rate
        } else {
            grid.t_max
        };
        let mut t = 0.0;
        for &t_out in &grid.output_times[1..] {
            while t < t_out {
                if self.stats.accepted + self.stats.rejected >= MAX_STEPS {
                    return Err(LadderError::StepBudget(MAX_STEPS));
                }
                let remaining = t_out - t;
                let landing = h >= remaining * (1.0 - 1e-12);
                let step = if landing { remaining } else { h };
                if step <= t.abs() * f64::EPSILON * 4.0 || step < f64::MIN_POSITIVE {
                    return Err(LadderError::StepUnderflow { time: t });
                }

                let hi = self.hi;
                let bufs = [&mut full[..], &mut mid[..], &mut half[..]];
                let (lo, eps) = (self.lo, self.eps);
                let d = match level_tol {
                    Some(_) => trapezoid_doubled::<true>(self.rates, &self.rho, bufs, lo, hi, step, eps),
                    None => trapezoid_doubled::<false>(self.rates, &self.rho, bufs, lo, hi, step, eps),
                };
                let mut err = moment_error(&d, error_tol, step, floors);
                if let Some(tol) = level_tol {
                    err = err.max(level_error(&d, tol, step));
                }
                if !err.is_finite() {
                    return Err(LadderError::NonFinite { time: t });
                }
                // second-order scheme: local error ∝ h³
                let factor = if err == 0.0 {
                    2.0
                } else {
                    (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 2.0)
                };
                if err <= 1.0 {
                    std::mem::swap(&mut self.rho, &mut half);
                    self.lo = d.lo_half;
                    self.trim();
                    t = if landing { t_out } else { t + step };
                    self.stats.accepted += 1;
                    if !landing || factor < 1.0 {
                        h = step * factor;
                    } else {
                        h = h.max(step * factor);
                    }
                } else {
                    self.stats.rejected += 1;
                    h = step * factor;
                }
            }
            self.record(&mut rec, t_out)?;
        }
        Ok(self.finish(grid, rec))
    }

    fn run_rk4(mut self, grid: &SimGrid, dt: f64) -> Result<Trajectory, LadderError> {
        let mut rec = Self::recorder(grid);
        self.record(&mut rec, 0.0)?;
        let n = self.rho.len();
        let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut stage = vec![0.0; n];
        let mut t = 0.0;
        for &t_out in &grid.output_times[1..] {
            while t < t_out {
                if self.stats.accepted >= MAX_STEPS {
                    return Err(LadderError::StepBudget(MAX_STEPS));
                }
                let remaining = t_out - t;
                let landing = dt >= remaining * (1.0 - 1e-12);
                let h = if landing { remaining } else { dt };
                // explicit stages move mass at most four levels per step
                let lo = self.lo.saturating_sub(4);
                let hi = self.hi;
                for m in lo..self.lo {
                    self.rho[m] = 0.0;
                }
                let rates = self.rates;
                rhs_window(rates, &self.rho, &mut k[0], lo, hi);
                for m in lo..=hi {
                    stage[m] = self.rho[m] + 0.5 * h * k[0][m];
                }
                rhs_window(rates, &stage, &mut k[1], lo, hi);
                for m in lo..=hi {
                    stage[m] = self.rho[m] + 0.5 * h * k[1][m];
                }
                rhs_window(rates, &stage, &mut k[2], lo, hi);
                for m in lo..=hi {
                    stage[m] = self.rho[m] + h * k[2][m];
                }
                rhs_window(rates, &stage, &mut k[3], lo, hi);
                for m in lo..=hi {
                    self.rho[m] += h / 6.0 * (k[0][m] + 2.0 * k[1][m] + 2.0 * k[2][m] + k[3][m]);
                }
                self.lo = lo;
                self.trim();
                t = if landing { t_out } else { t + h };
                self.stats.accepted += 1;
            }
            self.record(&mut rec, t_out)?;
        }
        Ok(self.finish(grid, rec))
    }
}

/// `out[m] = −Γ_m x_m + Γ_{m+1} x_{m+1}` on `lo..=hi`, with `x` zero above `hi`.
fn rhs_window(rates: &[f64], x: &[f64], out: &mut [f64], lo: usize, hi: usize) {
    out[hi] = -rates[hi] * x[hi];
    for m in lo..hi {
        out[m] = -rates[m] * x[m] + rates[m + 1] * x[m + 1];
    }
}

/// Result of one step-doubling pass.
struct Doubled {
    lo_half: usize,
    e_full: f64,
    p_full: f64,
    e_half: f64,
    p_half: f64,
    /// Largest `|half − full| / (|half| + LEVEL_FLOOR)` over the window.
    worst: f64,
    /// Largest rate in the window.
    gmax: f64,
}

/// Running state of one trapezoid forward substitution.
///
/// With `a = hΓ_M/2` and `f_M = a(ρ_M + ρ'_M)` the flux handed down to level
/// `M − 1`, the update is `ρ'_M = ((1 − a)ρ_M + f_{M+1}) / (1 + a)`. It is
/// rearranged so that the loop-carried dependency is a single multiply-add
/// on `f`.
#[derive(Clone, Copy)]
struct Sweep {
    k: f64,
    flux: f64,
    e: f64,
    p: f64,
}

impl Sweep {
    fn new(h: f64) -> Self {
        Self {
            k: 0.5 * h,
            flux: 0.0,
            e: 0.0,
            p: 0.0,
        }
    }

    #[inline(always)]
    fn level(&mut self, m: usize, g: f64, old: f64) -> f64 {
        let a = self.k * g;
        self.level_with(m, g, old, a, 1.0 / (1.0 + a))
    }

    /// As [`Sweep::level`] with `a` and `r = 1/(1 + a)` supplied.
    #[inline(always)]
    fn level_with(&mut self, m: usize, g: f64, old: f64, a: f64, r: f64) -> f64 {
        let p = (1.0 - a) * old * r;
        let v = p + r * self.flux;
        self.flux = a * (old + p) + a * r * self.flux;
        self.e += m as f64 * v;
        self.p += g * v;
        v
    }

    /// Continues below the input window (where `old = 0`) until the new
    /// population drops under `eps`, folds that value into the level above
    /// and returns the new lower edge.
    fn tail(&mut self, rates: &[f64], out: &mut [f64], below: usize, eps: f64) -> usize {
        for m in (0..below).rev() {
            let g = rates[m];
            let v = self.flux / (1.0 + self.k * g);
            if v.abs() < eps || v == 0.0 {
                out[m + 1] += v;
                self.e += (m + 1) as f64 * v;
                self.p += rates[m + 1] * v;
                return m + 1;
            }
            out[m] = v;
            self.e += m as f64 * v;
            self.p += g * v;
            self.flux = self.k * g * v;
        }
        0
    }
}

/// One trapezoid step of size `h` (into `full`) and two of size `h/2` (via
/// `mid` into `half`) from `inp`, supported on `lo..=hi`. The three forward
/// substitutions run interleaved in a single downward pass. With `LEVELS`,
/// the per-level discrepancy between the two results is tracked as well.
#[allow(clippy::too_many_arguments)]
fn trapezoid_doubled<const LEVELS: bool>(
    rates: &[f64],
    inp: &[f64],
    [full, mid, half]: [&mut [f64]; 3],
    lo: usize,
    hi: usize,
    h: f64,
    eps: f64,
) -> Doubled {
    let mut sf = Sweep::new(h);
    let mut sm = Sweep::new(0.5 * h);
    let mut sh = Sweep::new(0.5 * h);
    let mut worst: f64 = 0.0;
    let mut gmax: f64 = 0.0;
    for m in (lo + 1..=hi).rev() {
        let g = rates[m];
        let old = inp[m];
        let vf = sf.level(m, g, old);
        full[m] = vf;
        // both half steps share the diagonal
        let a = sm.k * g;
        let r = 1.0 / (1.0 + a);
        let vm = sm.level_with(m, g, old, a, r);
        mid[m] = vm;
        let vh = sh.level_with(m, g, vm, a, r);
        half[m] = vh;
        if LEVELS {
            let ratio = (vh - vf).abs() / (vh.abs() + LEVEL_FLOOR);
            // plain comparisons: cheaper than f64::max in this loop
            if ratio > worst {
                worst = ratio;
            }
            if g > gmax {
                gmax = g;
            }
        }
    }
    full[lo] = sf.level(lo, rates[lo], inp[lo]);
    mid[lo] = sm.level(lo, rates[lo], inp[lo]);
    let lo_full = sf.tail(rates, full, lo, eps);
    // the mid tail may fold mass into `mid[lo]`, so the second half step
    // only reaches `lo` once the tail is done
    let lo_mid = sm.tail(rates, mid, lo, eps);
    for m in (lo_mid..=lo).rev() {
        half[m] = sh.level(m, rates[m], mid[m]);
    }
    let lo_half = sh.tail(rates, half, lo_mid, eps);
    if LEVELS {
        // Levels at or below either fold point differ by the truncated
        // sub-eps mass whatever the step size, so they are not compared.
        for m in lo_full.max(lo_half) + 1..=lo {
            worst = worst.max((half[m] - full[m]).abs() / (half[m].abs() + LEVEL_FLOOR));
        }
        for m in lo_full.min(lo_half)..=lo {
            gmax = gmax.max(rates[m]);
        }
    }
    Doubled {
        lo_half,
        e_full: sf.e,
        p_full: sf.p,
        e_half: sh.e,
        p_half: sh.p,
        worst,
        gmax,
    }
}

/// Step-doubling error estimate on `E` and `P`, normalised so that 1 is the
/// acceptance limit. `floors` are absolute tolerances on `E` and `P`.
fn moment_error(d: &Doubled, error_tol: f64, h: f64, floors: (f64, f64)) -> f64 {
    // Observables are held to `error_tol` per unit of their own decay time
    // E/P, so the global relative error grows like error_tol × t/τ.
    let decay_fraction = if d.e_half > 0.0 {
        h * d.p_half.abs() / d.e_half
    } else {
        0.0
    };
    let scale = (error_tol * decay_fraction).max(ROUNDOFF);
    let rel = |full: f64, half: f64, floor: f64| {
        // Richardson: error of the half-step result ≈ (half − full)/3
        let diff = (half - full).abs() / 3.0;
        if diff == 0.0 {
            0.0
        } else {
            diff / (scale * half.abs() + floor + f64::MIN_POSITIVE)
        }
    };
    rel(d.e_full, d.e_half, floors.0).max(rel(d.p_full, d.p_half, floors.1))
}

/// Step-doubling error estimate on each level population, per unit of the
/// fastest decay time in the window.
fn level_error(d: &Doubled, tol: f64, h: f64) -> f64 {
    // Richardson factor 1/3 as for the moments
    d.worst / 3.0 / (tol * (h * d.gmax).max(ROUNDOFF / tol))
}

/// Populations below this are controlled in absolute rather than relative
/// terms by the per-level tolerance.
const LEVEL_FLOOR: f64 = 1e-12;

/// Exact populations of a decay chain with pairwise distinct rates.
///
/// With the chain starting in the top level `N`,
/// `ρ_M(t) = (Π_{k=M+1}^{N} Γ_k) Σ_{j=M}^{N} e^{−Γ_j t} / Π_{k=M..N, k≠j} (Γ_k − Γ_j)`.
/// The alternating sum cancels heavily, so it is evaluated in double-double
/// arithmetic; that keeps about 16 digits for chains of up to ~16 levels
/// unless two rates nearly coincide.
pub fn bateman_closed_form(rates: &[f64], t: f64) -> Result<LadderState, LadderError> {
    use dd::Dd;
    let n = rates.len() - 1;
    for i in 0..=n {
        for j in 0..i {
            if rates[i] == rates[j] {
                return Err(LadderError::RepeatedRates(j, i));
            }
        }
    }
    let decay: Vec<Dd> = rates.iter().map(|&g| Dd::mul_f64(-g, t).exp()).collect();
    let mut rho = vec![0.0; n + 1];
    for (m, out) in rho.iter_mut().enumerate() {
        let mut prefactor = Dd::from(1.0);
        for &g in &rates[m + 1..=n] {
            prefactor = prefactor * Dd::from(g);
        }
        let mut sum = Dd::from(0.0);
        for j in m..=n {
            let mut denom = Dd::from(1.0);
            for k in (m..=n).filter(|&k| k != j) {
                denom = denom * Dd::sub_f64(rates[k], rates[j]);
            }
            sum = sum + decay[j] / denom;
        }
        *out = (prefactor * sum).to_f64();
    }
    Ok(LadderState { rho, time: t })
}

/// Minimal double-double arithmetic (value = hi + lo, |lo| ≤ ulp(hi)/2).
mod dd {
    use std::ops::{Add, Div, Mul, Neg, Sub};

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Dd {
        hi: f64,
        lo: f64,
    }

    const LN2: Dd = Dd {
        hi: std::f64::consts::LN_2,
        lo: 2.319_046_813_846_299_6e-17,
    };

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        (s, b - (s - a))
    }

    fn two_prod(a: f64, b: f64) -> (f64, f64) {
        let p = a * b;
        (p, a.mul_add(b, -p))
    }

    impl From<f64> for Dd {
        fn from(x: f64) -> Self {
            Self { hi: x, lo: 0.0 }
        }
    }

    impl Dd {
        pub fn to_f64(self) -> f64 {
            self.hi + self.lo
        }

        /// Exact product of two doubles.
        pub fn mul_f64(a: f64, b: f64) -> Self {
            let (hi, lo) = two_prod(a, b);
            Self { hi, lo }
        }

        /// Exact difference of two doubles.
        pub fn sub_f64(a: f64, b: f64) -> Self {
            let (hi, lo) = two_sum(a, -b);
            Self { hi, lo }
        }

        fn ldexp(self, e: i32) -> Self {
            let s = 2f64.powi(e);
            Self {
                hi: self.hi * s,
                lo: self.lo * s,
            }
        }

        pub fn exp(self) -> Self {
            if self.hi < -745.0 {
                return Self::from(0.0);
            }
            // x = k ln2 + r, then e^r = (e^{r/8})^8 by Taylor and squaring;
            // few squarings keep the rounding error from being amplified
            let k = (self.hi / LN2.hi).round();
            let r = (self - LN2 * Self::from(k)).ldexp(-3);
            let mut term = Self::from(1.0);
            let mut sum = Self::from(1.0);
            for i in 1..=18 {
                term = term * r / Self::from(i as f64);
                sum = sum + term;
            }
            for _ in 0..3 {
                sum = sum * sum;
            }
            // split the scaling so that 2^k cannot overflow to zero early
            let k = k as i32;
            sum.ldexp(k / 2).ldexp(k - k / 2)
        }
    }

    impl Add for Dd {
        type Output = Self;
        fn add(self, o: Self) -> Self {
            let (s, e) = two_sum(self.hi, o.hi);
            let (t, f) = two_sum(self.lo, o.lo);
            let (s, e) = quick_two_sum(s, e + t);
            let (hi, lo) = quick_two_sum(s, e + f);
            Self { hi, lo }
        }
    }

    impl Neg for Dd {
        type Output = Self;
        fn neg(self) -> Self {
            Self {
                hi: -self.hi,
                lo: -self.lo,
            }
        }
    }

    impl Sub for Dd {
        type Output = Self;
        fn sub(self, o: Self) -> Self {
            self + (-o)
        }
    }

    impl Mul for Dd {
        type Output = Self;
        fn mul(self, o: Self) -> Self {
            let (p, e) = two_prod(self.hi, o.hi);
            let e = e + (self.hi * o.lo + self.lo * o.hi);
            let (hi, lo) = quick_two_sum(p, e);
            Self { hi, lo }
        }
    }

    impl Div for Dd {
        type Output = Self;
        fn div(self, o: Self) -> Self {
            let q1 = self.hi / o.hi;
            let r = self - o * Self::from(q1);
            let q2 = r.hi / o.hi;
            let r = r - o * Self::from(q2);
            let q3 = r.hi / o.hi;
            let (hi, lo) = quick_two_sum(q1, q2);
            Self { hi, lo } + Self::from(q3)
        }
    }

}
