use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use decay_ladder::config::{load_json, RunConfig, SweepConfig};
use decay_ladder::ensemble::{run_ensemble, summarize, sweep, EnsembleConfig, Observable};
use decay_ladder::error::{ConfigError, EnsembleError, FitError, OracleError, TraceError};
use decay_ladder::exchange::{run_oracle, DEFAULT_ORACLE_KAPPA_R};
use decay_ladder::io::{atomic_write, log_csv, summary_csv, sweep_csv, to_json};
use decay_ladder::observables::{mean_decay_time, normalize, MEAN_DECAY_WINDOW_LIFETIMES};
use decay_ladder::trace::{
    energy_from_power, fit_xi, prepare_energy_trace, read_metadata, read_trace_csv, sidecar_path,
};

/// Stochastic decay-ladder simulations of collective emission.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Worker threads; defaults to the hardware parallelism.
    #[arg(long, global = true, env = "DECAY_LADDER_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one ensemble and write E(t), P(t) and decay observables.
    Simulate(Common),
    /// Run one ensemble per sweep point and tabulate decay times.
    Sweep(Common),
    /// Fit the shape factor ξ to a measured fluorescence trace.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Fluorescence histogram, `t_ns,counts`, starting at the end of the
        /// excitation unless --pulse is given.
        #[arg(long)]
        trace: PathBuf,
        /// Excitation pulse, `t_ns,intensity`, on the same clock as --trace.
        #[arg(long)]
        pulse: Option<PathBuf>,
    },
    /// Check the exchange-Hamiltonian variance identity on random clouds.
    Oracle {
        /// Atom number.
        #[arg(long)]
        n: usize,
        /// Excitation number; every 1 ≤ M < N when omitted.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 20)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cloud radius in units of 1/κ_a.
        #[arg(long = "ka-r", default_value_t = DEFAULT_ORACLE_KAPPA_R)]
        ka_r: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit status contract: 2 for configuration or input errors, 3 for
/// numerical failures.
enum Failure {
    Config(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<EnsembleError> for Failure {
    fn from(e: EnsembleError) -> Self {
        match e {
            EnsembleError::Config(c) => c.into(),
            EnsembleError::EmptySweep => Failure::Config(e.to_string()),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Self {
        Failure::Numerical(e.to_string())
    }
}

impl From<FitError> for Failure {
    fn from(e: FitError) -> Self {
        match e {
            FitError::InvalidBounds(..) | FitError::WindowNotCovered => Failure::Config(e.to_string()),
            FitError::Ensemble(inner) => inner.into(),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Coincident(_) => Failure::Numerical(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

/// Files produced by a command, written only once everything succeeded.
struct Outputs {
    dir: PathBuf,
    files: Vec<(&'static str, String)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: &'static str, content: String) {
        self.files.push((name, content));
    }

    fn write(self, manifest: Value) -> Result<(), Failure> {
        let io_err = |path: &Path, e: std::io::Error| Failure::Config(format!("{}: {e}", path.display()));
        std::fs::create_dir_all(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        let mut manifest = manifest;
        manifest["outputs"] = self
            .files
            .iter()
            .map(|(name, _)| Value::from(self.dir.join(name).display().to_string()))
            .collect();
        for (name, content) in &self.files {
            let path = self.dir.join(name);
            atomic_write(&path, content.as_bytes()).map_err(|e| io_err(&path, e))?;
        }
        let path = self.dir.join("manifest.json");
        atomic_write(&path, to_json(&manifest).as_bytes()).map_err(|e| io_err(&path, e))
    }
}

fn manifest(subcommand: &str, config_path: Option<&Path>, config: Value, seed: u64, started: Instant) -> Value {
    json!({
        "subcommand": subcommand,
        "config_path": config_path.map(|p| p.display().to_string()),
        "config": config,
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "wall_clock_s": started.elapsed().as_secs_f64(),
    })
}

fn load_run(common: &Common) -> Result<(RunConfig, EnsembleConfig), Failure> {
    let mut run: RunConfig = load_json(&common.config)?;
    if let Some(seed) = common.seed {
        run.seed = seed;
    }
    let resolved = run.resolve()?;
    Ok((run, resolved))
}

fn simulate(common: &Common) -> Result<(), Failure> {
    let started = Instant::now();
    let (run, config) = load_run(common)?;
    let summary = run_ensemble(&config)?;
    let tau_a = config.phys.tau_a();
    let row = summarize(&config, &summary, Observable::Energy)?;
    let power_decay = mean_decay_time(
        &normalize(&summary.power_trace())?,
        (0.0, MEAN_DECAY_WINDOW_LIFETIMES * tau_a),
    )?;
    let mut out = Outputs::new(&common.out);
    out.add("summary.csv", summary_csv(&summary));
    out.add("log.csv", log_csv(&summary, tau_a));
    out.add(
        "decay_time.json",
        to_json(&json!({ "energy": row.decay, "power": power_decay })),
    );
    out.add(
        "transition.json",
        to_json(&json!({
            "transition_ns": row.transition_time.map(|t| t * 1e9),
            "tau_a_ns": tau_a * 1e9,
        })),
    );
    let mut m = manifest("simulate", Some(&common.config), json!(run), run.seed, started);
    m["stats"] = json!({
        "n_exc": summary.n_exc,
        "clamped_rates": summary.clamped_total,
        "integrator_steps": summary.total_steps,
    });
    out.write(m)
}

fn run_sweep(common: &Common) -> Result<(), Failure> {
    let started = Instant::now();
    let mut plan: SweepConfig = load_json(&common.config)?;
    if let Some(seed) = common.seed {
        plan.base.seed = seed;
    }
    let configs = plan.resolve()?;
    let rows = sweep(&configs, plan.observable)?;
    let mut out = Outputs::new(&common.out);
    out.add("sweep.csv", sweep_csv(&rows));
    let seed = plan.base.seed;
    out.write(manifest("sweep", Some(&common.config), json!(plan), seed, started))
}

fn fit(common: &Common, trace: &Path, pulse: Option<&Path>) -> Result<(), Failure> {
    let started = Instant::now();
    let mut run: RunConfig = load_json(&common.config)?;
    if let Some(seed) = common.seed {
        run.seed = seed;
    }
    let sidecar = sidecar_path(trace);
    let metadata = if sidecar.exists() {
        let meta = read_metadata(&sidecar)?;
        // the measurement conditions override the configured cloud
        run.cloud.od = Some(meta.od);
        run.cloud.radius_m = None;
        run.cloud.f_exc = meta.f_exc;
        Some(meta)
    } else {
        None
    };
    let config = run.resolve()?;
    let fluorescence = read_trace_csv(trace)?;
    let energy = match pulse {
        Some(p) => prepare_energy_trace(&fluorescence, &read_trace_csv(p)?)?,
        None => energy_from_power(&fluorescence)?,
    };
    let result = fit_xi(&energy, &config, run.xi_bounds)?;
    let mut out = Outputs::new(&common.out);
    out.add("fit.json", to_json(&result));
    let mut m = manifest("fit", Some(&common.config), json!(run), run.seed, started);
    m["trace"] = json!(trace.display().to_string());
    m["pulse"] = json!(pulse.map(|p| p.display().to_string()));
    m["metadata"] = json!(metadata);
    m["background"] = json!(energy.background);
    out.write(m)
}

fn oracle(n: usize, m: Option<usize>, trials: u64, seed: u64, ka_r: f64, dir: &Path) -> Result<(), Failure> {
    let started = Instant::now();
    let report = run_oracle(n, m, trials, ka_r, seed)?;
    let mut out = Outputs::new(dir);
    out.add("oracle.json", to_json(&report));
    let args = json!({ "n": n, "m": m, "trials": trials, "seed": seed, "ka_r": ka_r });
    out.write(manifest("oracle", None, args, seed, started))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config("threads: must be >= 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Failure::Numerical(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Sweep(c) => run_sweep(c),
        Command::Fit { common, trace, pulse } => fit(common, trace, pulse.as_deref()),
        Command::Oracle {
            n,
            m,
            trials,
            seed,
            ka_r,
            out,
        } => oracle(*n, *m, *trials, *seed, *ka_r, out),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
