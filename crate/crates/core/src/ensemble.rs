//! Monte Carlo averaging over rate realizations.
//!
//! Realization `i` draws its rates from a ChaCha8 generator seeded with the
//! master seed and switched to stream `i`, so any realization can be
//! regenerated on its own. Realizations run in parallel on the current rayon
//! pool; their trajectories are summed strictly in index order, so results
//! are bitwise independent of the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, EnsembleError};
use crate::ladder::{integrate, SimGrid, Trajectory};
use crate::observables::{
    mean_decay_time, normalize, transition_time, DecayTimeStats, Trace, TraceKind,
    MEAN_DECAY_WINDOW_LIFETIMES,
};
use crate::physics::{sample_rates, CloudConfig, PhysicalParams, RateRealization};

/// Default number of realizations per ensemble.
pub const DEFAULT_REALIZATIONS: u64 = 1000;

/// Realizations integrated between two ordered reductions.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub n_realizations: u64,
    pub master_seed: u64,
    pub cloud: CloudConfig,
    pub phys: PhysicalParams,
    pub grid: SimGrid,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_realizations < 1 {
            return Err(ConfigError::field("n_realizations", "must be >= 1"));
        }
        self.phys.validate()?;
        self.cloud.validate()?;
        self.grid
            .validate()
            .map_err(|e| ConfigError::field("grid", e.to_string()))
    }
}

/// Generator for realization `index`.
pub fn realization_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Rates of realization `index`, exactly as [`run_ensemble`] draws them.
pub fn realization_rates(config: &EnsembleConfig, index: u64) -> RateRealization {
    let mut rng = realization_rng(config.master_seed, index);
    sample_rates(&config.cloud, &config.phys, &mut rng, index)
}

/// Ensemble means on the output grid, in quanta and quanta per second.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub times: Vec<f64>,
    pub mean_energy: Vec<f64>,
    pub mean_power: Vec<f64>,
    /// Population standard deviation of `E` across realizations.
    pub std_energy: Vec<f64>,
    /// Negative rates clamped to zero, summed over realizations.
    pub clamped_total: u64,
    pub n_realizations: u64,
    pub n_exc: usize,
    pub master_seed: u64,
    /// Accepted plus rejected integrator steps over all realizations.
    pub total_steps: u64,
}

impl EnsembleSummary {
    pub fn energy_trace(&self) -> Trace {
        self.trace(TraceKind::Energy, &self.mean_energy)
    }

    pub fn power_trace(&self) -> Trace {
        self.trace(TraceKind::Power, &self.mean_power)
    }

    fn trace(&self, kind: TraceKind, values: &[f64]) -> Trace {
        Trace::new(kind, self.times.clone(), values.to_vec())
            .expect("output grid is validated and integrator output is finite")
    }
}

struct Accumulator {
    e: Vec<f64>,
    e2: Vec<f64>,
    p: Vec<f64>,
    clamped: u64,
    steps: u64,
}

impl Accumulator {
    fn add(&mut self, rates: &RateRealization, tr: &Trajectory) {
        for (k, (&e, &p)) in tr.energy.iter().zip(&tr.power).enumerate() {
            self.e[k] += e;
            self.e2[k] += e * e;
            self.p[k] += p;
        }
        self.clamped += rates.clamped_count as u64;
        self.steps += (tr.stats.accepted + tr.stats.rejected) as u64;
    }
}

/// Samples, integrates and averages `n_realizations` ladders.
pub fn run_ensemble(config: &EnsembleConfig) -> Result<EnsembleSummary, EnsembleError> {
    config.validate()?;
    let n_out = config.grid.output_times.len();
    let mut acc = Accumulator {
        e: vec![0.0; n_out],
        e2: vec![0.0; n_out],
        p: vec![0.0; n_out],
        clamped: 0,
        steps: 0,
    };
    let n = config.n_realizations;
    let mut start = 0;
    while start < n {
        let end = n.min(start + CHUNK as u64);
        // collect keeps index order whatever the scheduling
        let results: Vec<_> = (start..end)
            .into_par_iter()
            .map(|i| {
                let rates = realization_rates(config, i);
                integrate(&rates, &config.grid)
                    .map(|tr| (rates, tr))
                    .map_err(|source| EnsembleError::Realization { index: i, source })
            })
            .collect();
        for r in results {
            let (rates, tr) = r?;
            acc.add(&rates, &tr);
        }
        start = end;
    }
    let inv = 1.0 / n as f64;
    let mean_energy: Vec<f64> = acc.e.iter().map(|s| s * inv).collect();
    let std_energy = acc
        .e2
        .iter()
        .zip(&mean_energy)
        .map(|(s2, m)| (s2 * inv - m * m).max(0.0).sqrt())
        .collect();
    Ok(EnsembleSummary {
        times: config.grid.output_times.clone(),
        mean_energy,
        mean_power: acc.p.iter().map(|s| s * inv).collect(),
        std_energy,
        clamped_total: acc.clamped,
        n_realizations: n,
        n_exc: config.cloud.n_exc(),
        master_seed: config.master_seed,
        total_steps: acc.steps,
    })
}

/// Trace the sweep's decay time is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    #[default]
    Energy,
    Power,
}

/// One sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub od: f64,
    pub f_exc: f64,
    pub xi: f64,
    pub n_exc: usize,
    pub n_realizations: u64,
    /// Decay time over `(0, 2.3 τ_a)` of the selected observable.
    pub decay: DecayTimeStats,
    /// Superradiant-to-subradiant transition of the power trace.
    pub transition_time: Option<f64>,
}

/// Decay-time statistics and transition time of one ensemble.
pub fn summarize(
    config: &EnsembleConfig,
    summary: &EnsembleSummary,
    observable: Observable,
) -> Result<SweepRow, EnsembleError> {
    let tau_a = config.phys.tau_a();
    let trace = match observable {
        Observable::Energy => summary.energy_trace(),
        Observable::Power => summary.power_trace(),
    };
    let decay = mean_decay_time(
        &normalize(&trace)?,
        (0.0, MEAN_DECAY_WINDOW_LIFETIMES * tau_a),
    )?;
    let transition = transition_time(&normalize(&summary.power_trace())?, tau_a);
    Ok(SweepRow {
        od: config.cloud.od(&config.phys),
        f_exc: config.cloud.f_exc,
        xi: config.cloud.xi,
        n_exc: summary.n_exc,
        n_realizations: summary.n_realizations,
        decay,
        transition_time: transition,
    })
}

/// Runs each configuration in turn and tabulates its decay observables.
pub fn sweep(configs: &[EnsembleConfig], observable: Observable) -> Result<Vec<SweepRow>, EnsembleError> {
    if configs.is_empty() {
        return Err(EnsembleError::EmptySweep);
    }
    configs
        .iter()
        .map(|c| summarize(c, &run_ensemble(c)?, observable))
        .collect()
}
