use thiserror::Error;

/// Invalid user-supplied configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Field { field: String, reason: String },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Field {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LadderError {
    #[error("length mismatch: state has {state} levels, rates have {rates}")]
    LengthMismatch { state: usize, rates: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("negative decay rate {rate} at level {level}")]
    NegativeRate { level: usize, rate: f64 },
    #[error("RK4 step {dt:e} s exceeds the stability bound 2.78/max(Γ_M) = {bound:e} s")]
    Unstable { dt: f64, bound: f64 },
    #[error("non-finite state at t = {time:e} s")]
    NonFinite { time: f64 },
    #[error("step size underflow at t = {time:e} s")]
    StepUnderflow { time: f64 },
    #[error("step budget of {0} steps exhausted")]
    StepBudget(usize),
    #[error("closed form needs distinct rates, levels {0} and {1} coincide")]
    RepeatedRates(usize, usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("trace is empty")]
    Empty,
    #[error("times and values differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("sample times must be strictly increasing (index {0})")]
    NonMonotonicTime(usize),
    #[error("non-finite time or value at index {0}")]
    NonFinite(usize),
    #[error("initial value {0} must be positive")]
    NonPositiveInitial(f64),
    #[error("value at index {0} is not positive")]
    NonPositiveValue(usize),
    #[error("negative value at index {0}")]
    NegativeValue(usize),
    #[error("t = {0:e} s is not interior to the trace")]
    NotInterior(f64),
    #[error("fewer than two usable decay-time samples in window")]
    TooFewSamples,
    #[error("no sample after the peak falls below the threshold")]
    NoThresholdCrossing,
    #[error("total integral of the power trace is zero")]
    ZeroIntegral,
    #[error("invalid window ({0:e}, {1:e})")]
    InvalidWindow(f64, f64),
}

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("realization {index}: {source}")]
    Realization {
        index: u64,
        #[source]
        source: LadderError,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("sweep needs at least one configuration")]
    EmptySweep,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("kappa * r must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("need at least 2 atoms, got {0}")]
    TooFewAtoms(usize),
    #[error("excitation number {m} out of range for {n} atoms")]
    BadExcitation { n: usize, m: usize },
    #[error("subspace dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("could not place atoms without coincidences after {0} attempts")]
    Coincident(usize),
    #[error("need at least one trial")]
    NoTrials,
    #[error("coupling matrix is {got}x{got}, expected {expected}x{expected}")]
    SizeMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("xi bounds must satisfy 0 <= lo < hi, got [{0}, {1}]")]
    InvalidBounds(f64, f64),
    #[error("objective is not finite at xi = {0}")]
    NonFinite(f64),
    #[error("experimental trace does not cover the fit window")]
    WindowNotCovered,
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}
