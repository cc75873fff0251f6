//! Performance of a fixed-gain predictor under the stationary least
//! favorable model.
//!
//! A predictor `x̂′_{t+1} = A x̂′_t + G′(y_t − C x̂′_t)` run against the least
//! favorable model has joint error `e_t = [x_t − x̂′_t; x_t − x̂_t]` with
//!
//! ```text
//! e_{t+1} = F e_t + M ε_t,   F = Ã − [G′; 0] C̃,   M = B̃ − [G′; 0] D̃
//! Π_{t+1} = F Π_t Fᵀ + M Mᵀ
//! ```
//!
//! The upper-left block of `Π_t` is the variance of the predictor's error.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::least_favorable::{self, ConvergenceCertificate, LeastFavorableModel, SteadyBackward};
use crate::model::{kalman_steady, StateSpaceModel, Tolerance, STATIONARITY_TOL};
use crate::numerics::{self, SymMatrix};
use crate::robust_filter::{self, SteadyState};

/// Trace beyond which the covariance recursion is declared divergent.
pub const DIVERGENCE_TRACE: f64 = 1e12;

/// Default comparison horizon.
pub const DEFAULT_HORIZON: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSystem {
    pub f: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub pi0: SymMatrix,
}

impl ErrorSystem {
    /// Dimension `n` of the predictor's error `e′`.
    pub fn n(&self) -> usize {
        self.f.nrows() / 2
    }

    pub fn with_initial_covariance(mut self, pi0: SymMatrix) -> Result<Self> {
        if pi0.dim() != self.f.nrows() {
            return Err(Error::dims("error system Π₀", self.f.nrows(), pi0.dim()));
        }
        self.pi0 = pi0;
        Ok(self)
    }
}

/// Error dynamics of the constant-gain predictor `G′` under `lf`, with
/// `Π₀ = I₂ ⊗ V₀`.
pub fn error_system(lf: &LeastFavorableModel, g_prime: &DMatrix<f64>, v0: &SymMatrix) -> Result<ErrorSystem> {
    let n2 = lf.state_dim();
    let n = n2 / 2;
    let p = lf.c_tilde.nrows();
    if g_prime.nrows() != n || g_prime.ncols() != p {
        return Err(Error::dims(
            "error_system G′",
            format!("{n}x{p}"),
            format!("{}x{}", g_prime.nrows(), g_prime.ncols()),
        ));
    }
    if v0.dim() != n {
        return Err(Error::dims("error_system V₀", format!("{n}x{n}"), format!("{0}x{0}", v0.dim())));
    }
    let mut injection = DMatrix::zeros(n2, p);
    injection.view_mut((0, 0), (n, p)).copy_from(g_prime);
    let f = &lf.a_tilde - &injection * &lf.c_tilde;
    let m = &lf.b_tilde - &injection * &lf.d_tilde;
    let pi0 = SymMatrix::symmetrized(numerics::block_diag(&[v0.as_matrix(), v0.as_matrix()]));
    Ok(ErrorSystem { f, m, pi0 })
}

/// `Π_0..=Π_T`.
pub fn lyapunov_recursion(es: &ErrorSystem, horizon: usize) -> Result<Vec<SymMatrix>> {
    let q = SymMatrix::gram(&es.m);
    let mut out = Vec::with_capacity(horizon + 1);
    let mut pi = es.pi0.clone();
    out.push(pi.clone());
    for t in 0..horizon {
        pi = &pi.congruence(&es.f) + &q;
        let trace = pi.trace();
        if !trace.is_finite() || trace > DIVERGENCE_TRACE {
            return Err(Error::Diverged { step: t + 1, norm: trace });
        }
        out.push(pi.clone());
    }
    Ok(out)
}

/// Solution of `Π = F Π Fᵀ + M Mᵀ`.
pub fn steady_variance(es: &ErrorSystem) -> Result<SymMatrix> {
    numerics::solve_stein(&es.f.transpose(), &SymMatrix::gram(&es.m))
}

/// `10·log₁₀(v)`.
pub fn to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

fn leading_diagonal(pi: &SymMatrix, n: usize) -> Vec<f64> {
    (0..n).map(|i| pi[(i, i)]).collect()
}

#[derive(Debug, Clone)]
pub struct PerformanceReport {
    pub trajectory: Vec<SymMatrix>,
    pub steady: SymMatrix,
    /// Steady variances of the components of `e′`.
    pub variances: Vec<f64>,
    pub variances_db: Vec<f64>,
    /// Relative residual of the steady Lyapunov equation.
    pub residual: f64,
}

impl PerformanceReport {
    /// Variances of `e′` at time `t`.
    pub fn variances_at(&self, t: usize) -> Vec<f64> {
        leading_diagonal(&self.trajectory[t], self.steady.dim() / 2)
    }
}

pub fn evaluate(es: &ErrorSystem, horizon: usize) -> Result<PerformanceReport> {
    let trajectory = lyapunov_recursion(es, horizon)?;
    let steady = steady_variance(es)?;
    let q = SymMatrix::gram(&es.m);
    let residual =
        (steady.as_matrix() - steady.congruence(&es.f).as_matrix() - q.as_matrix()).norm() / (1.0 + steady.norm());
    let variances = leading_diagonal(&steady, es.n());
    let variances_db = variances.iter().map(|&v| to_db(v)).collect();
    Ok(PerformanceReport { trajectory, steady, variances, variances_db, residual })
}

/// Sample statistics of `e′_T` over independent simulations.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloEstimate {
    pub trajectories: usize,
    pub horizon: usize,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    /// Sample second moment `E[e′ᵢ²]`, comparable with `Π_T`.
    pub variance: Vec<f64>,
    pub variance_se: Vec<f64>,
}

/// Trajectories per work unit; partial sums are combined in unit order so
/// results do not depend on the thread count.
const MC_CHUNK: usize = 256;

struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
    fourth: Vec<f64>,
}

impl Moments {
    fn zeros(len: usize) -> Self {
        Moments { first: vec![0.0; len], second: vec![0.0; len], fourth: vec![0.0; len] }
    }

    fn add(&mut self, other: &Moments) {
        for (acc, v) in
            [(&mut self.first, &other.first), (&mut self.second, &other.second), (&mut self.fourth, &other.fourth)]
        {
            acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        }
    }
}

/// Simulates `e_{t+1} = F e_t + M ε_t` from `e_0 ~ N(0, Π₀)` for `trajectories`
/// independent runs and returns statistics of `e′_t` for `t = 0..=T`.
///
/// Run `i` draws from ChaCha stream `i` under `seed`.
pub fn monte_carlo_path(
    es: &ErrorSystem,
    trajectories: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<MonteCarloEstimate>> {
    if trajectories < 2 {
        return Err(Error::domain("monte_carlo_check", "need at least two trajectories"));
    }
    let n2 = es.f.nrows();
    let n = es.n();
    let m = es.m.ncols();
    let root = numerics::psd_factor(&es.pi0);
    let len = (horizon + 1) * n;
    let chunks: Vec<Moments> = (0..trajectories.div_ceil(MC_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut acc = Moments::zeros(len);
            for i in chunk * MC_CHUNK..((chunk + 1) * MC_CHUNK).min(trajectories) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let mut normal = |len: usize| DVector::from_fn(len, |_, _| StandardNormal.sample(&mut rng));
                let mut e = &root * normal(n2);
                for t in 0..=horizon {
                    if t > 0 {
                        e = &es.f * &e + &es.m * normal(m);
                    }
                    for k in 0..n {
                        let v = e[k];
                        let v2 = v * v;
                        acc.first[t * n + k] += v;
                        acc.second[t * n + k] += v2;
                        acc.fourth[t * n + k] += v2 * v2;
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = Moments::zeros(len);
    for c in &chunks {
        total.add(c);
    }
    let count = trajectories as f64;
    Ok((0..=horizon)
        .map(|t| {
            let mut est = MonteCarloEstimate {
                trajectories,
                horizon: t,
                mean: vec![0.0; n],
                mean_se: vec![0.0; n],
                variance: vec![0.0; n],
                variance_se: vec![0.0; n],
            };
            for k in 0..n {
                let mean = total.first[t * n + k] / count;
                let second = total.second[t * n + k] / count;
                let fourth = total.fourth[t * n + k] / count;
                let centered = ((second - mean * mean) * count / (count - 1.0)).max(0.0);
                est.mean[k] = mean;
                est.mean_se[k] = (centered / count).sqrt();
                est.variance[k] = second;
                est.variance_se[k] = ((fourth - second * second).max(0.0) / count).sqrt();
            }
            est
        })
        .collect())
}

/// Statistics of `e′_T` from [`monte_carlo_path`].
pub fn monte_carlo_check(
    es: &ErrorSystem,
    trajectories: usize,
    horizon: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    Ok(monte_carlo_path(es, trajectories, horizon, seed)?.pop().expect("horizon + 1 entries"))
}

/// Kalman versus robust predictor under the robust filter's own least
/// favorable model.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub steady: SteadyState,
    pub certificate: ConvergenceCertificate,
    pub backward: SteadyBackward,
    pub lf: LeastFavorableModel,
    pub kalman_gain: DMatrix<f64>,
    pub kalman_system: ErrorSystem,
    pub robust_system: ErrorSystem,
    pub kalman: PerformanceReport,
    pub robust: PerformanceReport,
    /// Per component, Kalman minus robust steady variance in dB (positive
    /// when the robust predictor is better).
    pub gap_db: Vec<f64>,
}

/// Runs the whole pipeline: steady robust filter, certificate, backward
/// limit, least favorable model, and both error systems over `horizon`
/// steps, with `Π₀ = I₂ ⊗ P₀`.
///
/// The backward iteration runs uncertified when the certificate fails; the
/// report's `backward.certified` records which case applied.
pub fn compare(model: &StateSpaceModel, tol: &Tolerance, horizon: usize, rho_grid: usize) -> Result<ComparisonReport> {
    let steady = robust_filter::steady_state(model, tol, STATIONARITY_TOL)?;
    let certificate = least_favorable::certify(&steady, rho_grid)?;
    let backward = least_favorable::steady_backward(
        &steady,
        least_favorable::BACKWARD_TOL,
        certificate.holds.then_some(&certificate),
    )?;
    let lf = least_favorable::assemble(model, &steady, &backward.x)?;
    compare_from_parts(model, steady, certificate, backward, lf, horizon)
}

/// The error-system half of [`compare`], for callers that already hold the
/// steady filter and its least favorable model.
pub fn compare_from_parts(
    model: &StateSpaceModel,
    steady: SteadyState,
    certificate: ConvergenceCertificate,
    backward: SteadyBackward,
    lf: LeastFavorableModel,
    horizon: usize,
) -> Result<ComparisonReport> {
    let kalman_gain = kalman_steady(model)?.gain;
    let kalman_system = error_system(&lf, &kalman_gain, model.p0())?;
    let robust_system = error_system(&lf, &steady.gain, model.p0())?;
    let kalman = evaluate(&kalman_system, horizon)?;
    let robust = evaluate(&robust_system, horizon)?;
    let gap_db = kalman.variances_db.iter().zip(&robust.variances_db).map(|(k, r)| k - r).collect();
    Ok(ComparisonReport {
        steady,
        certificate,
        backward,
        lf,
        kalman_gain,
        kalman_system,
        robust_system,
        kalman,
        robust,
        gap_db,
    })
}
