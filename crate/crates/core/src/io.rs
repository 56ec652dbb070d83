//! Output files. CSV is comma-separated with a header row and LF line ends;
//! numbers use the shortest round-trip form in exponent notation, so equal
//! values always print identically. Times are in ns.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::ensemble::{EnsembleSummary, SweepRow};

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

/// `t_ns,E,P_per_ns,E_std`: ensemble means in quanta and quanta per ns.
pub fn summary_csv(summary: &EnsembleSummary) -> String {
    let mut out = String::from("t_ns,E,P_per_ns,E_std\n");
    for i in 0..summary.times.len() {
        writeln!(
            out,
            "{},{},{},{}",
            num(summary.times[i] * 1e9),
            num(summary.mean_energy[i]),
            num(summary.mean_power[i] * 1e-9),
            num(summary.std_energy[i]),
        )
        .unwrap();
    }
    out
}

/// `t_ns,t_over_tau,ln_E,ln_P`: logarithms of `E(t)/E(0)` and `P(t)/P(0)`.
/// A value that has decayed to exactly zero prints as `-inf`.
pub fn log_csv(summary: &EnsembleSummary, tau_a: f64) -> String {
    let mut out = String::from("t_ns,t_over_tau,ln_E,ln_P\n");
    let (e0, p0) = (summary.mean_energy[0], summary.mean_power[0]);
    for i in 0..summary.times.len() {
        let t = summary.times[i];
        writeln!(
            out,
            "{},{},{},{}",
            num(t * 1e9),
            num(t / tau_a),
            num((summary.mean_energy[i] / e0).ln()),
            num((summary.mean_power[i] / p0).ln()),
        )
        .unwrap();
    }
    out
}

/// One row per sweep point; `transition_ns` is empty when there is none.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "od,f_exc,xi,n_exc,n_realizations,mean_tau_ns,std_tau_ns,n_tau_samples,transition_ns\n",
    );
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            num(r.od),
            num(r.f_exc),
            num(r.xi),
            r.n_exc,
            r.n_realizations,
            num(r.decay.mean_tau * 1e9),
            num(r.decay.std_tau * 1e9),
            r.decay.n_samples,
            r.transition_time.map(|t| num(t * 1e9)).unwrap_or_default(),
        )
        .unwrap();
    }
    out
}
