//! Brute-force exchange Hamiltonian on fixed-excitation subspaces.
//!
//! Atoms sit uniformly in a ball and share one dipole axis. The pair
//! coupling is `F_jk = g_jk / 2` in units of `Γ_a`, with `g` the geometric
//! factor of [`geometric_coupling`]. On the `M`-excitation subspace the
//! Hamiltonian moves one excitation from atom `j` to atom `k` with amplitude
//! `F_jk`; its eigenvalue second moment is compared with the pair-sum
//! identity `M (N − M) ⟨F²⟩` and with the large-`N` continuum estimate.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::OracleError;
use crate::physics::COUPLING_VARIANCE_CONSTANT;

/// Default cap on the subspace dimension `C(N, M)`.
pub const DEFAULT_DIMENSION_CAP: usize = 5000;

/// Below this separation the near-field bracket is summed as a series.
const SERIES_CUTOFF: f64 = 0.5;

/// `cos x / x² − sin x / x³`, which tends to `−1/3` at `x = 0`.
fn near_field(x: f64) -> f64 {
    if x < SERIES_CUTOFF {
        // Σ_{n≥1} (−1)^n 2n x^{2n−2} / (2n+1)!
        let x2 = x * x;
        let mut term = -1.0 / 3.0;
        let mut sum = term;
        for n in 2..=10 {
            let nf = n as f64;
            term *= -x2 * nf / ((nf - 1.0) * (2.0 * nf) * (2.0 * nf + 1.0));
            sum += term;
        }
        sum
    } else {
        x.cos() / (x * x) - x.sin() / (x * x * x)
    }
}

/// Dimensionless pair coupling at separation `x = κ_a r` and angle `θ`
/// between the dipole axis and the separation vector:
/// `g = (3/2)[(1 − cos²θ) sin x / x + (1 − 3cos²θ)(cos x / x² − sin x / x³)]`.
pub fn geometric_coupling(kappa_r: f64, theta: f64) -> Result<f64, OracleError> {
    if !(kappa_r > 0.0) {
        return Err(OracleError::NonPositiveDistance(kappa_r));
    }
    let c2 = theta.cos().powi(2);
    let sinc = kappa_r.sin() / kappa_r;
    Ok(1.5 * ((1.0 - c2) * sinc + (1.0 - 3.0 * c2) * near_field(kappa_r)))
}

/// Atom positions (m) in a ball, with a common dipole axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomCloudSample {
    pub positions: Vec<[f64; 3]>,
    /// Unit vector.
    pub dipole_axis: [f64; 3],
    pub kappa_a: f64,
}

/// Redraws allowed per atom before giving up on distinct positions.
const MAX_PLACEMENT_ATTEMPTS: usize = 100;

impl AtomCloudSample {
    /// `n` atoms uniform in a ball of `radius`, dipoles along +z.
    pub fn uniform_ball<R: Rng + ?Sized>(
        n: usize,
        radius: f64,
        kappa_a: f64,
        rng: &mut R,
    ) -> Result<Self, OracleError> {
        if n < 2 {
            return Err(OracleError::TooFewAtoms(n));
        }
        let mut positions: Vec<[f64; 3]> = Vec::with_capacity(n);
        for _ in 0..n {
            let mut placed = false;
            for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                let p = loop {
                    let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
                    if norm2(p) <= 1.0 {
                        break p.map(|c| c * radius);
                    }
                };
                if positions.iter().all(|q| q != &p) {
                    positions.push(p);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(OracleError::Coincident(MAX_PLACEMENT_ATTEMPTS));
            }
        }
        Ok(Self {
            positions,
            dipole_axis: [0.0, 0.0, 1.0],
            kappa_a,
        })
    }
}

fn norm2(v: [f64; 3]) -> f64 {
    v.iter().map(|c| c * c).sum()
}

/// Symmetric matrix of geometric factors `g_jk`, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    pub g: DMatrix<f64>,
}

impl CouplingMatrix {
    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    /// Physical coupling `F_jk = g_jk / 2` in units of `Γ_a`.
    pub fn f(&self, j: usize, k: usize) -> f64 {
        0.5 * self.g[(j, k)]
    }

    /// Mean of `F_jk²` over unordered pairs, in units of `Γ_a²`.
    pub fn mean_pair_f2(&self) -> f64 {
        let n = self.n();
        let mut sum = 0.0;
        for j in 0..n {
            for k in j + 1..n {
                sum += self.f(j, k).powi(2);
            }
        }
        sum / (n * (n - 1) / 2) as f64
    }
}

pub fn build_couplings(cloud: &AtomCloudSample) -> Result<CouplingMatrix, OracleError> {
    let n = cloud.positions.len();
    if n < 2 {
        return Err(OracleError::TooFewAtoms(n));
    }
    let mut g = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in j + 1..n {
            let d: [f64; 3] = std::array::from_fn(|i| cloud.positions[k][i] - cloud.positions[j][i]);
            let r = norm2(d).sqrt();
            let cos_theta = d.iter().zip(&cloud.dipole_axis).map(|(a, b)| a * b).sum::<f64>() / r;
            let v = geometric_coupling(cloud.kappa_a * r, cos_theta.clamp(-1.0, 1.0).acos())?;
            g[(j, k)] = v;
            g[(k, j)] = v;
        }
    }
    Ok(CouplingMatrix { g })
}

/// `C(n, k)`, saturating at `usize::MAX`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    c as usize
}

/// The `m`-subsets of `0..n` as bit masks in colexicographic order, which is
/// increasing numeric order of the masks.
fn colex_subsets(n: usize, m: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(binomial(n, m));
    if m == 0 {
        out.push(0);
        return out;
    }
    let mut s: u64 = (1u64 << m) - 1;
    let limit = 1u64 << n;
    while s < limit {
        out.push(s);
        // next mask with the same popcount
        let c = s & s.wrapping_neg();
        let r = s + c;
        s = (((r ^ s) >> 2) / c) | r;
    }
    out
}

/// Position of a subset in colexicographic order: `Σ_i C(s_i, i + 1)` over
/// its elements `s_0 < s_1 < …`.
fn colex_rank(mask: u64) -> usize {
    let mut rank = 0;
    let mut i = 0;
    let mut bits = mask;
    while bits != 0 {
        let s = bits.trailing_zeros() as usize;
        i += 1;
        rank += binomial(s, i);
        bits &= bits - 1;
    }
    rank
}

/// Exchange Hamiltonian on the `m`-excitation subspace of `n` atoms, in
/// units of `Γ_a`, in the colexicographic subset basis.
pub fn build_subspace_hamiltonian(
    couplings: &CouplingMatrix,
    n: usize,
    m: usize,
    cap: usize,
) -> Result<DMatrix<f64>, OracleError> {
    if couplings.n() != n {
        return Err(OracleError::SizeMismatch {
            expected: n,
            got: couplings.n(),
        });
    }
    if n < 2 {
        return Err(OracleError::TooFewAtoms(n));
    }
    if m > n || n > 63 {
        return Err(OracleError::BadExcitation { n, m });
    }
    let dim = binomial(n, m);
    if dim > cap {
        return Err(OracleError::DimensionCap { dim, cap });
    }
    let basis = colex_subsets(n, m);
    let mut h = DMatrix::zeros(dim, dim);
    for (row, &s) in basis.iter().enumerate() {
        for j in (0..n).filter(|&j| s >> j & 1 == 1) {
            for k in (0..n).filter(|&k| s >> k & 1 == 0) {
                let t = s & !(1 << j) | 1 << k;
                h[(row, colex_rank(t))] = couplings.f(j, k);
            }
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    pub n: usize,
    pub m: usize,
    pub dim: usize,
    /// Ascending, units of `Γ_a`.
    pub eigenvalues: Vec<f64>,
    /// Mean of `λ²` (units of `Γ_a²`).
    pub empirical_variance: f64,
    /// `M (N − M) ⟨F²⟩_pairs` (units of `Γ_a²`).
    pub predicted_variance: f64,
}

pub fn spectrum(
    couplings: &CouplingMatrix,
    n: usize,
    m: usize,
    cap: usize,
) -> Result<SpectrumResult, OracleError> {
    let h = build_subspace_hamiltonian(couplings, n, m, cap)?;
    let dim = h.nrows();
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let empirical_variance = eigenvalues.iter().map(|l| l * l).sum::<f64>() / dim as f64;
    Ok(SpectrumResult {
        n,
        m,
        dim,
        eigenvalues,
        empirical_variance,
        predicted_variance: (m * (n - m)) as f64 * couplings.mean_pair_f2(),
    })
}

/// Variances in units of `Γ_a²`, widths in units of `Γ_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub dim: usize,
    pub empirical_variance: f64,
    pub predicted_variance: f64,
    /// `(π + 29/12)/(κ_a R)² (N − M) M`.
    pub analytic_variance: f64,
    /// Square root of `analytic_variance`.
    pub sigma_m9: f64,
    /// `sigma_m9 · √M`, the width with stimulated emission.
    pub sigma_stimulated: f64,
    pub mean_eigenvalue: f64,
    pub relative_error: f64,
}

pub fn variance_check(sr: &SpectrumResult, kappa_r: f64) -> VarianceReport {
    let (n, m) = (sr.n as f64, sr.m as f64);
    let analytic = COUPLING_VARIANCE_CONSTANT / (kappa_r * kappa_r) * (n - m) * m;
    let sigma = analytic.sqrt();
    let relative_error = if sr.predicted_variance == 0.0 {
        sr.empirical_variance.abs()
    } else {
        (sr.empirical_variance - sr.predicted_variance).abs() / sr.predicted_variance
    };
    VarianceReport {
        n: sr.n,
        m: sr.m,
        dim: sr.dim,
        empirical_variance: sr.empirical_variance,
        predicted_variance: sr.predicted_variance,
        analytic_variance: analytic,
        sigma_m9: sigma,
        sigma_stimulated: sigma * m.sqrt(),
        mean_eigenvalue: sr.eigenvalues.iter().sum::<f64>() / sr.dim as f64,
        relative_error,
    }
}

/// Default cloud size `κ_a R` of oracle runs.
pub const DEFAULT_ORACLE_KAPPA_R: f64 = 10.0;

/// Report of one random cloud at one excitation number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: u64,
    #[serde(flatten)]
    pub report: VarianceReport,
}

/// Variance identity checked over several random clouds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRun {
    #[serde(rename = "N")]
    pub n: usize,
    pub kappa_r: f64,
    pub seed: u64,
    pub trials: u64,
    pub reports: Vec<TrialReport>,
    pub max_relative_error: f64,
    pub max_abs_mean_eigenvalue: f64,
}

/// Draws `trials` clouds of `n` atoms in a ball of radius `kappa_r / κ_a`
/// and checks the variance identity at excitation number `m`, or at every
/// `1 ≤ M ≤ n − 1` when `m` is `None`. Cloud `i` comes from a ChaCha8
/// generator seeded with `seed` on stream `i`.
pub fn run_oracle(
    n: usize,
    m: Option<usize>,
    trials: u64,
    kappa_r: f64,
    seed: u64,
) -> Result<OracleRun, OracleError> {
    if !(kappa_r > 0.0 && kappa_r.is_finite()) {
        return Err(OracleError::NonPositiveDistance(kappa_r));
    }
    if n < 2 {
        return Err(OracleError::TooFewAtoms(n));
    }
    if trials == 0 {
        return Err(OracleError::NoTrials);
    }
    let ms: Vec<usize> = match m {
        Some(m) if m > n => return Err(OracleError::BadExcitation { n, m }),
        Some(m) => vec![m],
        None => (1..n).collect(),
    };
    let mut reports = Vec::with_capacity(ms.len() * trials as usize);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        let cloud = AtomCloudSample::uniform_ball(n, kappa_r, 1.0, &mut rng)?;
        let couplings = build_couplings(&cloud)?;
        for &m in &ms {
            let sr = spectrum(&couplings, n, m, DEFAULT_DIMENSION_CAP)?;
            reports.push(TrialReport {
                trial,
                report: variance_check(&sr, kappa_r),
            });
        }
    }
    let max_relative_error = reports.iter().map(|r| r.report.relative_error).fold(0.0, f64::max);
    let max_abs_mean_eigenvalue = reports
        .iter()
        .map(|r| r.report.mean_eigenvalue.abs())
        .fold(0.0, f64::max);
    Ok(OracleRun {
        n,
        kappa_r,
        seed,
        trials,
        reports,
        max_relative_error,
        max_abs_mean_eigenvalue,
    })
}
