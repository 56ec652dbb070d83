//! Normalized and logarithmic traces, instantaneous decay time, windowed
//! mean decay time and the superradiant-to-subradiant transition.
//!
//! The decay time of a positive trace `V` is `τ(t) = −1 / (d ln V/dt)`,
//! estimated with the centred three-point stencil on the stored (possibly
//! non-uniform) grid. Only interior grid points are used.

use serde::{Deserialize, Serialize};

use crate::error::TraceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Power,
    Energy,
    Pulse,
}

/// Time series with metadata. Times are in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub kind: TraceKind,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub normalized: bool,
    /// Values hold natural logarithms.
    pub logarithmic: bool,
    /// Set by [`log_trace`] when it stopped at a non-positive value: the
    /// length of the input trace before truncation.
    pub truncated_from: Option<usize>,
    /// Constant background subtracted from the raw values, if any.
    pub background: Option<f64>,
}

impl Trace {
    pub fn new(kind: TraceKind, times: Vec<f64>, values: Vec<f64>) -> Result<Self, TraceError> {
        if times.is_empty() {
            return Err(TraceError::Empty);
        }
        if times.len() != values.len() {
            return Err(TraceError::LengthMismatch(times.len(), values.len()));
        }
        if let Some(i) = (1..times.len()).find(|&i| !(times[i] > times[i - 1])) {
            return Err(TraceError::NonMonotonicTime(i));
        }
        if let Some(i) = (0..times.len()).find(|&i| !(times[i].is_finite() && values[i].is_finite())) {
            return Err(TraceError::NonFinite(i));
        }
        Ok(Self {
            kind,
            times,
            values,
            normalized: false,
            logarithmic: false,
            truncated_from: None,
            background: None,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.times[self.len() - 1] - self.times[0]
    }
}

/// Divides by the first value so that the trace starts at 1.
pub fn normalize(trace: &Trace) -> Result<Trace, TraceError> {
    let v0 = trace.values[0];
    if !(v0 > 0.0) {
        return Err(TraceError::NonPositiveInitial(v0));
    }
    let mut out = trace.clone();
    if v0 != 1.0 {
        out.values.iter_mut().for_each(|v| *v /= v0);
    }
    out.normalized = true;
    Ok(out)
}

/// Pointwise natural logarithm. Stops before the first non-positive value
/// and records the original length in `truncated_from`.
pub fn log_trace(trace: &Trace) -> Trace {
    let keep = trace
        .values
        .iter()
        .position(|&v| !(v > 0.0))
        .unwrap_or(trace.len());
    let mut out = trace.clone();
    if keep < trace.len() {
        out.times.truncate(keep);
        out.values.truncate(keep);
        out.truncated_from = Some(trace.len());
    }
    out.values.iter_mut().for_each(|v| *v = v.ln());
    out.logarithmic = true;
    out
}

/// `d ln V/dt` at interior index `i` from the non-uniform centred stencil,
/// exact when `ln V` is quadratic in `t`.
fn log_slope(times: &[f64], values: &[f64], i: usize) -> Result<f64, TraceError> {
    if i == 0 || i + 1 >= times.len() {
        return Err(TraceError::NotInterior(times.get(i).copied().unwrap_or(f64::NAN)));
    }
    for j in i - 1..=i + 1 {
        if !(values[j] > 0.0) {
            return Err(TraceError::NonPositiveValue(j));
        }
    }
    let (h0, h1) = (times[i] - times[i - 1], times[i + 1] - times[i]);
    let (y0, y1, y2) = (values[i - 1].ln(), values[i].ln(), values[i + 1].ln());
    Ok((-h1 / (h0 * (h0 + h1))) * y0
        + ((h1 - h0) / (h0 * h1)) * y1
        + (h0 / (h1 * (h0 + h1))) * y2)
}

/// Decay rate `k = −d ln V/dt` at every interior grid point with positive
/// neighbours, as `(index, t, k)`.
pub fn decay_rate_profile(trace: &Trace) -> Vec<(usize, f64, f64)> {
    (1..trace.len().saturating_sub(1))
        .filter_map(|i| {
            log_slope(&trace.times, &trace.values, i)
                .ok()
                .map(|s| (i, trace.times[i], -s))
        })
        .collect()
}

/// `τ(t) = −1 / (d ln V/dt)` in seconds. At a grid point the centred stencil
/// is used directly; between grid points the log-slope is interpolated
/// linearly from the two enclosing points, which must both be interior.
pub fn instantaneous_tau(trace: &Trace, t: f64) -> Result<f64, TraceError> {
    let times = &trace.times;
    let n = times.len();
    if n < 3 || !(t > times[0] && t < times[n - 1]) {
        return Err(TraceError::NotInterior(t));
    }
    // first index with times[i] >= t
    let i = times.partition_point(|&x| x < t);
    let spacing = times[i] - times[i - 1];
    let slope = if (times[i] - t).abs() <= 1e-9 * spacing {
        log_slope(times, &trace.values, i)?
    } else if (t - times[i - 1]).abs() <= 1e-9 * spacing {
        log_slope(times, &trace.values, i - 1)?
    } else {
        let s0 = log_slope(times, &trace.values, i - 1)?;
        let s1 = log_slope(times, &trace.values, i)?;
        let w = (t - times[i - 1]) / spacing;
        s0 + w * (s1 - s0)
    };
    Ok(-1.0 / slope)
}

/// Mean and spread of the instantaneous decay time over a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayTimeStats {
    /// `(t_lo, t_hi)` in seconds.
    pub window: (f64, f64),
    pub mean_tau: f64,
    /// Population standard deviation.
    pub std_tau: f64,
    pub n_samples: usize,
}

#[derive(Serialize, Deserialize)]
struct DecayTimeStatsNs {
    window_ns: [f64; 2],
    mean_tau_ns: f64,
    std_tau_ns: f64,
    n_samples: usize,
}

impl Serialize for DecayTimeStats {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        DecayTimeStatsNs {
            window_ns: [self.window.0 * 1e9, self.window.1 * 1e9],
            mean_tau_ns: self.mean_tau * 1e9,
            std_tau_ns: self.std_tau * 1e9,
            n_samples: self.n_samples,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DecayTimeStats {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = DecayTimeStatsNs::deserialize(d)?;
        Ok(Self {
            window: (r.window_ns[0] * 1e-9, r.window_ns[1] * 1e-9),
            mean_tau: r.mean_tau_ns * 1e-9,
            std_tau: r.std_tau_ns * 1e-9,
            n_samples: r.n_samples,
        })
    }
}

/// Window of the mean decay time, in units of `τ_a`.
pub const MEAN_DECAY_WINDOW_LIFETIMES: f64 = 2.3;

/// Samples `τ` at every interior grid point with `t_lo ≤ t ≤ t_hi`.
/// Points where the trace is not decaying (`d ln V/dt ≥ 0`) or touches zero
/// have no finite positive decay time and are skipped.
pub fn mean_decay_time(trace: &Trace, window: (f64, f64)) -> Result<DecayTimeStats, TraceError> {
    let (lo, hi) = window;
    let times = &trace.times;
    let n = times.len();
    let slack = 1e-9 * trace.duration().max(f64::MIN_POSITIVE);
    if !(lo < hi) || lo < times[0] - slack || hi > times[n - 1] + slack {
        return Err(TraceError::InvalidWindow(lo, hi));
    }
    let taus: Vec<f64> = decay_rate_profile(trace)
        .into_iter()
        .filter(|&(_, t, k)| t >= lo - slack && t <= hi + slack && k > 0.0)
        .map(|(_, _, k)| 1.0 / k)
        .collect();
    if taus.len() < 2 {
        return Err(TraceError::TooFewSamples);
    }
    let count = taus.len() as f64;
    let mean = taus.iter().sum::<f64>() / count;
    let var = taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / count;
    Ok(DecayTimeStats {
        window,
        mean_tau: mean,
        std_tau: var.sqrt(),
        n_samples: taus.len(),
    })
}

/// Relative margin on the decay rate below which `τ` counts as equal to `τ_a`.
/// Keeps round-off on a pure exponential from registering as crossings.
const RATE_TOLERANCE: f64 = 1e-9;

/// How long `τ` must stay at or above `τ_a` after a crossing, in lifetimes.
pub const TRANSITION_HOLD_LIFETIMES: f64 = 0.5;

/// First time at which `τ` rises from below `τ_a` to at least `τ_a` and
/// stays there for the next half lifetime. The crossing is located by linear
/// interpolation of the decay rate between the two grid points around it.
/// `None` if there is no such crossing, including when the trace ends before
/// the hold period could be checked.
pub fn transition_time(trace: &Trace, tau_a: f64) -> Option<f64> {
    let gamma = 1.0 / tau_a;
    let fast = gamma * (1.0 + RATE_TOLERANCE);
    let profile = decay_rate_profile(trace);
    for w in 0..profile.len().saturating_sub(1) {
        let (i0, t0, k0) = profile[w];
        let (i1, t1, k1) = profile[w + 1];
        // consecutive grid points only; the stencil skips around bad values
        if i1 != i0 + 1 || !(k0 > fast) || k1 > fast {
            continue;
        }
        let hold_end = t1 + TRANSITION_HOLD_LIFETIMES * tau_a;
        let mut covered = false;
        let mut held = true;
        let mut prev = i1;
        for &(i, t, k) in &profile[w + 1..] {
            if i != prev && i != prev + 1 {
                held = false;
                break;
            }
            prev = i;
            if t > hold_end {
                covered = true;
                break;
            }
            if k > fast {
                held = false;
                break;
            }
        }
        if held && covered {
            let frac = (k0 - gamma) / (k0 - k1);
            return Some(t0 + frac.clamp(0.0, 1.0) * (t1 - t0));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const TAU: f64 = 26.2e-9;

    fn uniform(n: usize, t_max: f64, f: impl Fn(f64) -> f64) -> Trace {
        let times: Vec<f64> = (0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect();
        let values = times.iter().map(|&t| f(t)).collect();
        Trace::new(TraceKind::Energy, times, values).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let tr = Trace::new(TraceKind::Energy, vec![0.0, 1.0, 2.0], vec![2.0, 1.0, 0.5]).unwrap();
        let n = normalize(&tr).unwrap();
        assert_eq!(n.values, vec![1.0, 0.5, 0.25]);
        assert!(n.normalized);
        assert_eq!(normalize(&n).unwrap(), n);

        let tr = Trace::new(TraceKind::Energy, vec![0.0, 1.0], vec![6.5e5, 3.0e5]).unwrap();
        assert_eq!(normalize(&tr).unwrap().values[0], 1.0);

        let tr = Trace::new(TraceKind::Power, vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        assert!(matches!(normalize(&tr), Err(TraceError::NonPositiveInitial(_))));
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(matches!(
            Trace::new(TraceKind::Power, vec![], vec![]),
            Err(TraceError::Empty)
        ));
        assert!(matches!(
            Trace::new(TraceKind::Power, vec![0.0, 1.0], vec![1.0]),
            Err(TraceError::LengthMismatch(2, 1))
        ));
        assert!(matches!(
            Trace::new(TraceKind::Power, vec![0.0, 1.0, 1.0], vec![1.0; 3]),
            Err(TraceError::NonMonotonicTime(2))
        ));
    }

    #[test]
    fn log_examples() {
        let tr = normalize(&uniform(11, 5.0 * TAU, |t| (-t / TAU).exp())).unwrap();
        let l = log_trace(&tr);
        assert_eq!(l.values[0], 0.0);
        for (t, v) in l.times.iter().zip(&l.values) {
            assert!((v + t / TAU).abs() < 1e-12);
        }
        assert!(l.truncated_from.is_none());

        let tr = Trace::new(TraceKind::Power, vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 0.5, 0.0, 0.2]).unwrap();
        let l = log_trace(&tr);
        assert_eq!(l.len(), 2);
        assert_eq!(l.truncated_from, Some(4));
    }

    #[test]
    fn tau_of_exponentials() {
        let tr = uniform(101, 10.0 * TAU, |t| (-t / TAU).exp());
        for &t in &[0.1 * TAU, 2.0 * TAU, 5.05 * TAU, 9.9 * TAU] {
            let tau = instantaneous_tau(&tr, t).unwrap();
            assert!((tau / TAU - 1.0).abs() < 1e-9, "t={t} tau={tau}");
        }
        let tr = uniform(101, 10.0 * TAU, |t| (-2.0 * t / TAU).exp());
        assert!((instantaneous_tau(&tr, 3.0 * TAU).unwrap() / (TAU / 2.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tau_needs_interior_positive_points() {
        let tr = uniform(11, 10.0, |t| (-t).exp());
        assert!(matches!(instantaneous_tau(&tr, 0.0), Err(TraceError::NotInterior(_))));
        assert!(matches!(instantaneous_tau(&tr, 10.0), Err(TraceError::NotInterior(_))));
        assert!(instantaneous_tau(&tr, 0.5).is_err());
        let tr = Trace::new(TraceKind::Power, vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 0.5, 0.0, 0.1]).unwrap();
        assert!(matches!(instantaneous_tau(&tr, 1.0), Err(TraceError::NonPositiveValue(2))));
    }

    #[test]
    fn tau_on_nonuniform_grid() {
        // ln V quadratic: the three-point stencil is exact
        let times: Vec<f64> = (0..40).map(|i| (i as f64 / 39.0).powi(2) * 4.0).collect();
        let values = times.iter().map(|&t| (-t - 0.1 * t * t).exp()).collect();
        let tr = Trace::new(TraceKind::Energy, times.clone(), values).unwrap();
        for &t in &times[1..39] {
            let tau = instantaneous_tau(&tr, t).unwrap();
            assert!((tau - 1.0 / (1.0 + 0.2 * t)).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_of_pure_exponential() {
        for &tau in &[0.3, 1.0, 7.0] {
            for &n in &[50, 1000] {
                let tr = uniform(n, 10.0 * tau, |t| (-t / tau).exp());
                let s = mean_decay_time(&tr, (0.0, 2.3 * tau)).unwrap();
                assert!((s.mean_tau / tau - 1.0).abs() < 1e-9);
                assert!(s.std_tau < 1e-9 * tau);
                assert!(s.n_samples >= 2);
            }
        }
    }

    #[test]
    fn mean_of_piecewise_exponential() {
        let split = 1.15 * TAU;
        let v = |t: f64| {
            if t <= split {
                (-2.0 * t / TAU).exp()
            } else {
                (-2.0 * split / TAU - (t - split) / (2.0 * TAU)).exp()
            }
        };
        let tr = uniform(1001, 10.0 * TAU, v);
        let s = mean_decay_time(&tr, (0.0, 2.3 * TAU)).unwrap();
        assert!(s.mean_tau > TAU / 2.0 && s.mean_tau < 2.0 * TAU);
        assert!(s.std_tau > 0.0);
    }

    #[test]
    fn mean_needs_samples_and_valid_window() {
        let tr = uniform(4, 3.0, |t| (-t).exp());
        assert!(matches!(mean_decay_time(&tr, (0.0, 1.5)), Err(TraceError::TooFewSamples)));
        assert!(matches!(mean_decay_time(&tr, (1.0, 0.5)), Err(TraceError::InvalidWindow(..))));
        assert!(matches!(mean_decay_time(&tr, (0.0, 5.0)), Err(TraceError::InvalidWindow(..))));
    }

    #[test]
    fn stats_serialize_in_ns() {
        let s = DecayTimeStats {
            window: (0.0, 60.26e-9),
            mean_tau: 26.2e-9,
            std_tau: 1e-9,
            n_samples: 10,
        };
        let j: serde_json::Value = serde_json::to_value(s).unwrap();
        assert!((j["mean_tau_ns"].as_f64().unwrap() - 26.2).abs() < 1e-9);
        assert!((j["window_ns"][1].as_f64().unwrap() - 60.26).abs() < 1e-9);
        let back: DecayTimeStats = serde_json::from_value(j).unwrap();
        assert!((back.mean_tau - s.mean_tau).abs() < 1e-20);
    }

    #[test]
    fn no_transition_for_pure_exponential() {
        let tr = uniform(1024, 10.0 * TAU, |t| (-t / TAU).exp());
        assert_eq!(transition_time(&tr, TAU), None);
    }

    #[test]
    fn transition_on_tau_ramp() {
        // τ(t) = τ_a (0.5 + t/(2.6 τ_a)) reaches τ_a at t = 1.3 τ_a
        let v = |t: f64| (1.0 + t / (1.3 * TAU)).powf(-2.6);
        let tr = uniform(400, 3.9 * TAU, v);
        let step = tr.times[1];
        let t = transition_time(&tr, TAU).unwrap();
        assert!((t - 1.3 * TAU).abs() <= step, "t* = {}", t / TAU);
    }

    #[test]
    fn transition_needs_hold_period() {
        // crosses at 1.3 τ_a but the record stops 0.2 τ_a later
        let v = |t: f64| (1.0 + t / (1.3 * TAU)).powf(-2.6);
        let tr = uniform(200, 1.5 * TAU, v);
        assert_eq!(transition_time(&tr, TAU), None);
    }
}
