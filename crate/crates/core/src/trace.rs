//! Experimental traces: CSV ingest, excitation-pulse timing, background
//! subtraction, energy from power, and the one-parameter fit of `ξ`.
//!
//! Files carry times in nanoseconds; everything in memory is in seconds.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::{run_ensemble, EnsembleConfig};
use crate::error::{ConfigError, FitError, TraceError};
use crate::observables::{normalize, Trace, TraceKind};

/// Fraction of the pulse peak that marks the end of the excitation.
pub const PULSE_THRESHOLD: f64 = 0.1;

/// End of the fit window, in units of `τ_a`.
pub const FIT_WINDOW_LIFETIMES: f64 = 9.0;

/// Default search interval for `ξ`.
pub const DEFAULT_XI_BOUNDS: (f64, f64) = (0.0, 2.0);

/// Width of the final golden-section bracket.
pub const XI_TOLERANCE: f64 = 1e-3;

/// Measurement conditions stored next to a trace as `<name>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceMetadata {
    /// Probe detuning in units of `Γ_a`.
    pub detuning: f64,
    pub od: f64,
    pub f_exc: f64,
}

/// Sidecar path of a trace file: same stem, `.json` extension.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn read_metadata(path: &Path) -> Result<TraceMetadata, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Parses `t_ns,counts` (fluorescence, read as a power trace) or
/// `t_ns,intensity` (excitation pulse). `name` labels error messages.
pub fn parse_trace_csv<R: Read>(reader: R, name: &str) -> Result<Trace, ConfigError> {
    let csv_err = |source| ConfigError::Csv {
        path: name.to_string(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let kind = match (header.get(0), header.get(1), header.len()) {
        (Some("t_ns"), Some("counts"), 2) => TraceKind::Power,
        (Some("t_ns"), Some("intensity"), 2) => TraceKind::Pulse,
        _ => {
            return Err(ConfigError::field(
                format!("{name}: header"),
                format!("expected `t_ns,counts` or `t_ns,intensity`, got `{}`", header.iter().collect::<Vec<_>>().join(",")),
            ))
        }
    };
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in rdr.deserialize::<(f64, f64)>().enumerate() {
        let (t_ns, v) = rec.map_err(csv_err)?;
        // data rows start on line 2
        let line = row + 2;
        if !(v >= 0.0) {
            return Err(ConfigError::field(
                format!("{name}: line {line}"),
                format!("value {v} must be finite and >= 0"),
            ));
        }
        times.push(t_ns * 1e-9);
        values.push(v);
    }
    Trace::new(kind, times, values).map_err(|e| ConfigError::field(name, e.to_string()))
}

pub fn read_trace_csv(path: &Path) -> Result<Trace, ConfigError> {
    let file = std::fs::File::open(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_trace_csv(std::io::BufReader::new(file), &path.display().to_string())
}

fn peak_index(trace: &Trace) -> usize {
    // first occurrence of the maximum
    trace
        .values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > trace.values[best] { i } else { best })
}

/// Time of the first sample after the global peak whose intensity is below
/// 10% of the peak.
pub fn find_t_zero(pulse: &Trace) -> Result<f64, TraceError> {
    let ip = peak_index(pulse);
    let threshold = PULSE_THRESHOLD * pulse.values[ip];
    pulse.values[ip + 1..]
        .iter()
        .position(|&v| v < threshold)
        .map(|k| pulse.times[ip + 1 + k])
        .ok_or(TraceError::NoThresholdCrossing)
}

/// Time of the first sample whose intensity reaches 10% of the peak.
pub fn pulse_onset(pulse: &Trace) -> f64 {
    let peak = pulse.values[peak_index(pulse)];
    let i = pulse
        .values
        .iter()
        .position(|&v| v >= PULSE_THRESHOLD * peak)
        .expect("the peak itself reaches the threshold");
    pulse.times[i]
}

/// Subtracts the mean of the samples taken before `pulse_start` and clamps
/// the result at zero. With no pre-pulse samples the background is zero.
/// The level is recorded in `background`.
pub fn subtract_background(trace: &Trace, pulse_start: f64) -> Trace {
    let pre: Vec<f64> = trace
        .times
        .iter()
        .zip(&trace.values)
        .filter(|(&t, _)| t < pulse_start)
        .map(|(_, &v)| v)
        .collect();
    let level = if pre.is_empty() {
        0.0
    } else {
        pre.iter().sum::<f64>() / pre.len() as f64
    };
    let mut out = trace.clone();
    out.values.iter_mut().for_each(|v| *v = (*v - level).max(0.0));
    out.background = Some(level);
    out
}

/// Keeps the samples at or after `t0` and shifts time so the first kept
/// sample is at zero.
pub fn crop_from(trace: &Trace, t0: f64) -> Result<Trace, TraceError> {
    let start = trace
        .times
        .iter()
        .position(|&t| t >= t0)
        .ok_or(TraceError::Empty)?;
    let origin = trace.times[start];
    let mut out = Trace::new(
        trace.kind,
        trace.times[start..].iter().map(|t| t - origin).collect(),
        trace.values[start..].to_vec(),
    )?;
    out.background = trace.background;
    Ok(out)
}

/// `E(t) = ∫ₜᵀ P / ∫₀ᵀ P` by the trapezoid rule over the whole record, which
/// assumes the decay is complete by its end. Truncating the record at `T`
/// biases `E` by roughly the fraction of energy still stored at `T`.
pub fn energy_from_power(power: &Trace) -> Result<Trace, TraceError> {
    if let Some(i) = power.values.iter().position(|&v| v < 0.0) {
        return Err(TraceError::NegativeValue(i));
    }
    let n = power.len();
    let mut tail = vec![0.0; n];
    for i in (0..n - 1).rev() {
        let dt = power.times[i + 1] - power.times[i];
        tail[i] = tail[i + 1] + 0.5 * dt * (power.values[i] + power.values[i + 1]);
    }
    let total = tail[0];
    if !(total > 0.0) {
        return Err(TraceError::ZeroIntegral);
    }
    tail.iter_mut().for_each(|v| *v /= total);
    let mut out = Trace::new(TraceKind::Energy, power.times.clone(), tail)?;
    out.normalized = true;
    out.background = power.background;
    Ok(out)
}

/// Normalized energy trace from a raw fluorescence histogram and the
/// excitation pulse recorded on the same clock.
pub fn prepare_energy_trace(fluorescence: &Trace, pulse: &Trace) -> Result<Trace, TraceError> {
    let t0 = find_t_zero(pulse)?;
    let cleaned = subtract_background(fluorescence, pulse_onset(pulse));
    energy_from_power(&crop_from(&cleaned, t0)?)
}

/// Outcome of [`fit_xi`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub xi_star: f64,
    /// Sum of squared differences of `ln E` over the window.
    pub residual: f64,
    /// `(0, 9τ_a)` in seconds.
    pub window: (f64, f64),
    pub n_realizations: u64,
    pub seed: u64,
    /// Every `(ξ, residual)` evaluated, in search order.
    pub evaluations: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct FitResultFile {
    xi_star: f64,
    residual: f64,
    window_ns: [f64; 2],
    n_realizations: u64,
    seed: u64,
    evaluations: Vec<[f64; 2]>,
}

impl Serialize for FitResult {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        FitResultFile {
            xi_star: self.xi_star,
            residual: self.residual,
            window_ns: [self.window.0 * 1e9, self.window.1 * 1e9],
            n_realizations: self.n_realizations,
            seed: self.seed,
            evaluations: self.evaluations.iter().map(|&(x, r)| [x, r]).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FitResult {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = FitResultFile::deserialize(d)?;
        Ok(Self {
            xi_star: r.xi_star,
            residual: r.residual,
            window: (r.window_ns[0] * 1e-9, r.window_ns[1] * 1e-9),
            n_realizations: r.n_realizations,
            seed: r.seed,
            evaluations: r.evaluations.iter().map(|p| (p[0], p[1])).collect(),
        })
    }
}

/// Linear interpolation of `ys` at `x`, with `xs` increasing and covering `x`.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let j = xs.partition_point(|&v| v <= x);
    if j == 0 {
        return ys[0];
    }
    if j == xs.len() {
        return ys[xs.len() - 1];
    }
    let w = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
    ys[j - 1] + w * (ys[j] - ys[j - 1])
}

struct Objective<'a> {
    base: &'a EnsembleConfig,
    /// Experimental sample times and `ln E` inside the window.
    times: Vec<f64>,
    log_e: Vec<f64>,
}

impl Objective<'_> {
    fn eval(&self, xi: f64) -> Result<f64, FitError> {
        let mut config = self.base.clone();
        config.cloud.xi = xi;
        let summary = run_ensemble(&config)?;
        let e0 = summary.mean_energy[0];
        let log_sim: Vec<f64> = summary.mean_energy.iter().map(|e| (e / e0).ln()).collect();
        let residual: f64 = self
            .times
            .iter()
            .zip(&self.log_e)
            .map(|(&t, &y)| (interpolate(&summary.times, &log_sim, t) - y).powi(2))
            .sum();
        if residual.is_finite() {
            Ok(residual)
        } else {
            Err(FitError::NonFinite(xi))
        }
    }
}

/// Least-squares fit of `ξ` to a measured energy trace starting at `t = 0`.
///
/// Minimizes `Σ [ln E_sim(tᵢ; ξ) − ln E_exp(tᵢ)]²` over the samples in
/// `0 ≤ tᵢ ≤ 9τ_a` by golden-section search on `bounds`, with both end
/// points also evaluated. Every evaluation reuses the base master seed, so
/// the objective is a deterministic function of `ξ`. The measured trace is
/// normalized first; only its shape matters. Costs about twenty ensemble
/// runs.
pub fn fit_xi(experimental: &Trace, base: &EnsembleConfig, bounds: (f64, f64)) -> Result<FitResult, FitError> {
    let (lo, hi) = bounds;
    if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
        return Err(FitError::InvalidBounds(lo, hi));
    }
    base.validate().map_err(crate::error::EnsembleError::from)?;
    let tau_a = base.phys.tau_a();
    let t_end = FIT_WINDOW_LIFETIMES * tau_a;
    let slack = 1e-9 * t_end;
    let times = &experimental.times;
    if times[0] > slack || times[times.len() - 1] < t_end - slack {
        return Err(FitError::WindowNotCovered);
    }
    if base.grid.t_max < t_end - slack {
        return Err(FitError::Ensemble(
            ConfigError::field("grid.t_max", "must reach the end of the fit window (9 τ_a)").into(),
        ));
    }
    let exp = normalize(experimental)?;
    let mut objective = Objective {
        base,
        times: Vec::new(),
        log_e: Vec::new(),
    };
    for (i, (&t, &v)) in exp.times.iter().zip(&exp.values).enumerate() {
        if t > t_end + slack {
            break;
        }
        if !(v > 0.0) {
            return Err(TraceError::NonPositiveValue(i).into());
        }
        objective.times.push(t);
        objective.log_e.push(v.ln());
    }

    let mut evaluations = Vec::new();
    let mut eval = |xi: f64| -> Result<f64, FitError> {
        let r = objective.eval(xi)?;
        evaluations.push((xi, r));
        Ok(r)
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    while b - a > XI_TOLERANCE {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d)?;
        }
    }
    eval(lo)?;
    eval(hi)?;
    // earliest evaluation wins ties
    let (xi_star, residual) = evaluations
        .iter()
        .copied()
        .fold((f64::NAN, f64::INFINITY), |best, e| if e.1 < best.1 { e } else { best });
    Ok(FitResult {
        xi_star,
        residual,
        window: (0.0, t_end),
        n_realizations: base.n_realizations,
        seed: base.master_seed,
        evaluations,
    })
}
