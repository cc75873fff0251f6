//! Least favorable model synthesis.
//!
//! The adversary's model is an augmented `2n`-state system driven by unit
//! white noise,
//!
//! ```text
//! ξ_{t+1} = Ã_t ξ_t + B̃_t ε_t,        y_t = C̃_t ξ_t + D̃_t ε_t
//!
//! Ã_t = [ A   B H_t        ]   B̃_t = [ B   ] L_t   C̃_t = [ C  D H_t ]   D̃_t = D L_t
//!       [ 0   Ā_t + B̄_t H_t ]         [ B̄_t ]
//!
//! K̃_t = (I − B̄_tᵀ X B̄_t)⁻¹,  H_t = K̃_t B̄_tᵀ X Ā_t,  L_t L_tᵀ = K̃_t,
//! X = Ω_{t+1}⁻¹ + θ_t I
//! ```
//!
//! where `Ā_t = A − G_t C`, `B̄_t = B − G_t D`, and `Ω_t⁻¹` runs backward from
//! `Ω_T⁻¹ = 0` through
//!
//! ```text
//! Ω_t⁻¹ = Ā_tᵀ [ (Ω_{t+1}⁻¹ + θ_t I)⁻¹ − B̄_t B̄_tᵀ ]⁻¹ Ā_t.
//! ```
//!
//! The state is `ξ = [x; x − x̂]`, the nominal state stacked with the robust
//! filter's prediction error. In steady state `X_t = Ω_t⁻¹ + θI` obeys
//! `X_t = Θ(X_{t+1})` with
//!
//! ```text
//! Θ(X) = Āᵀ (X⁻¹ − B̄B̄ᵀ)⁻¹ Ā + θI.
//! ```

use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{relative_change, StateSpaceModel, MAX_STEADY_STEPS};
use crate::numerics::{self, SymMatrix};
use crate::robust_filter::{RobustTrajectory, SteadyState};

/// Default number of grid points for the ρ scan.
pub const DEFAULT_RHO_GRID: usize = 512;

/// Default relative change threshold for the Θ fixed-point iteration.
pub const BACKWARD_TOL: f64 = 1e-12;

/// Upper end of the ρ range when `Ā` is nilpotent.
const RHO_CAP: f64 = 1e3;

/// Offset of the ρ range from its open endpoints.
const RHO_EDGE: f64 = 1e-9;

fn psd_tolerance(x: &SymMatrix) -> f64 {
    1e-12 * (1.0 + x.norm())
}

/// `(X⁻¹ − B̄B̄ᵀ)⁻¹`, written as `X + X B̄ (I − B̄ᵀXB̄)⁻¹ B̄ᵀ X` so that no
/// inverse of `X` is needed. Requires `X ⪰ 0` and `I − B̄ᵀXB̄ ≻ 0`, which is
/// `0 ≺ X ≺ (B̄B̄ᵀ)⁻¹` when `X` is invertible.
fn inner_inverse(x: &SymMatrix, b_bar: &DMatrix<f64>, context: &str) -> Result<SymMatrix> {
    let n = x.dim();
    if b_bar.nrows() != n {
        return Err(Error::dims(context, format!("B̄ with {n} rows"), b_bar.nrows()));
    }
    let min_x = numerics::min_eig_sym(x);
    if min_x < -psd_tolerance(x) {
        return Err(Error::domain(context, format!("X is not positive semidefinite (min eigenvalue {min_x:e})")));
    }
    let xb = x.as_matrix() * b_bar;
    let s = DMatrix::identity(b_bar.ncols(), b_bar.ncols()) - b_bar.transpose() * &xb;
    let chol = s.clone().cholesky().ok_or_else(|| {
        let min_s = numerics::min_eig_sym(&SymMatrix::symmetrized(s));
        Error::domain(context, format!("X⁻¹ − B̄B̄ᵀ is not positive definite (I − B̄ᵀXB̄ min eigenvalue {min_s:e})"))
    })?;
    let correction = &xb * chol.solve(&xb.transpose());
    Ok(SymMatrix::symmetrized(x.as_matrix() + correction))
}

/// `Θ(X) = Āᵀ(X⁻¹ − B̄B̄ᵀ)⁻¹Ā + θI`.
pub fn theta_map(x: &SymMatrix, a_bar: &DMatrix<f64>, b_bar: &DMatrix<f64>, theta: f64) -> Result<SymMatrix> {
    let inner = inner_inverse(x, b_bar, "theta_map")?;
    Ok(inner.congruence(&a_bar.transpose()).add_identity(theta))
}

/// `Ω_t⁻¹` together with the weight `X = Ω_t⁻¹ + θ_{t−1} I` that the model
/// at time `t − 1` is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardIterate {
    pub t: usize,
    pub omega_inv: SymMatrix,
    /// `None` at `t = 0`, which has no preceding step.
    pub x: Option<SymMatrix>,
}

/// Runs the time-varying backward recursion over the forward trajectory.
///
/// Returns `Ω_t⁻¹` for `t = 0..=T`, indexed by `t` (the recursion itself
/// runs from `T` down to 0).
pub fn backward_recursion(model: &StateSpaceModel, forward: &RobustTrajectory) -> Result<Vec<BackwardIterate>> {
    let horizon = forward.horizon();
    let n = model.n();
    let mut out = vec![None; horizon + 1];
    let mut omega_inv = SymMatrix::zeros(n);
    for t in (0..horizon).rev() {
        let step = &forward.steps[t];
        let x = omega_inv.add_identity(step.theta);
        let a_bar = model.a() - &step.gain * model.c();
        let b_bar = model.b() - &step.gain * model.d();
        let inner = inner_inverse(&x, &b_bar, &format!("backward recursion at t = {t}"))?;
        let next = inner.congruence(&a_bar.transpose());
        out[t + 1] = Some(BackwardIterate { t: t + 1, omega_inv, x: Some(x) });
        omega_inv = next;
    }
    out[0] = Some(BackwardIterate { t: 0, omega_inv, x: None });
    Ok(out.into_iter().map(|it| it.expect("filled")).collect())
}

/// The index window `[⌈0.4·T⌉, ⌊0.6·T⌋]` on which a long-horizon backward
/// recursion is taken to be stationary.
pub fn mid_interval(horizon: usize) -> std::ops::RangeInclusive<usize> {
    let lo = (0.4 * horizon as f64).ceil() as usize;
    let hi = (0.6 * horizon as f64).floor() as usize;
    lo..=hi.max(lo)
}

/// Lemma-type certificate for convergence of the steady backward iteration:
/// some `ρ ∈ (1, 1/σ(Ā))` with `(1 − ρ⁻²) Σ_ρ⁻¹ − B̄B̄ᵀ ⪰ 0`, where
/// `Σ_ρ = ρ² Āᵀ Σ_ρ Ā + θI`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceCertificate {
    pub rho: f64,
    pub sigma_rho: SymMatrix,
    /// Minimum eigenvalue of `(1 − ρ⁻²) Σ_ρ⁻¹ − B̄B̄ᵀ`.
    pub margin: f64,
    pub holds: bool,
    /// Relative residual of the Stein equation for `Σ_ρ`.
    pub stein_residual: f64,
}

impl ConvergenceCertificate {
    /// Whether `I − B̄ᵀ Σ_ρ B̄ ≻ 0`, i.e. `Σ_ρ ≺ (B̄B̄ᵀ)⁻¹`.
    pub fn below_inverse_noise(&self, b_bar: &DMatrix<f64>) -> bool {
        let s =
            DMatrix::identity(b_bar.ncols(), b_bar.ncols()) - b_bar.transpose() * self.sigma_rho.as_matrix() * b_bar;
        numerics::min_eig_sym(&SymMatrix::symmetrized(s)) > 0.0
    }
}

/// `Σ_ρ` and the margin at one `ρ`.
pub fn certify_at(a_bar: &DMatrix<f64>, b_bar: &DMatrix<f64>, theta: f64, rho: f64) -> Result<ConvergenceCertificate> {
    let n = a_bar.nrows();
    let q = SymMatrix::scaled_identity(n, theta);
    let f = a_bar * rho;
    let sigma = numerics::solve_stein(&f, &q)?;
    let lhs = sigma.congruence(&f.transpose());
    let stein_residual = (sigma.as_matrix() - lhs.as_matrix() - q.as_matrix()).norm() / (1.0 + sigma.norm());
    let margin = if theta == 0.0 {
        f64::INFINITY
    } else {
        let sigma_inv = numerics::guarded_inverse(&sigma, "Σ_ρ⁻¹")?;
        let mat =
            SymMatrix::symmetrized(sigma_inv.as_matrix() * (1.0 - rho.powi(-2)) - SymMatrix::gram(b_bar).as_matrix());
        numerics::min_eig_sym(&mat)
    };
    Ok(ConvergenceCertificate { rho, sigma_rho: sigma, margin, holds: margin >= 0.0, stein_residual })
}

fn margin_or_neg_inf(a_bar: &DMatrix<f64>, b_bar: &DMatrix<f64>, theta: f64, rho: f64) -> f64 {
    certify_at(a_bar, b_bar, theta, rho).map(|c| c.margin).unwrap_or(f64::NEG_INFINITY)
}

/// The open ρ range `(1 + 1e-9, 1/σ(Ā) − 1e-9)`.
pub fn rho_range(a_bar: &DMatrix<f64>) -> Result<(f64, f64)> {
    let radius = numerics::spectral_radius(a_bar)?;
    if radius >= 1.0 {
        return Err(Error::NotStable { radius });
    }
    let hi = if radius > 1.0 / RHO_CAP { 1.0 / radius - RHO_EDGE } else { RHO_CAP };
    Ok((1.0 + RHO_EDGE, hi))
}

/// `points` log-spaced values covering the ρ range (its midpoint if
/// `points == 1`).
pub fn rho_grid(a_bar: &DMatrix<f64>, points: usize) -> Result<Vec<f64>> {
    let (lo, hi) = rho_range(a_bar)?;
    if points == 0 {
        return Err(Error::domain("rho_grid", "need at least one grid point"));
    }
    if points == 1 {
        return Ok(vec![(lo * hi).sqrt()]);
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    Ok((0..points).map(|i| (llo + (lhi - llo) * i as f64 / (points - 1) as f64).exp()).collect())
}

/// Margin over the ρ grid, in grid order. Points where the Stein solve fails
/// (numerically at the stability boundary) report `-∞`.
pub fn certificate_sweep(ss: &SteadyState, points: usize) -> Result<Vec<(f64, f64)>> {
    let grid = rho_grid(&ss.a_bar, points)?;
    Ok(grid.par_iter().map(|&rho| (rho, margin_or_neg_inf(&ss.a_bar, &ss.b_bar, ss.theta, rho))).collect())
}

/// Scans the ρ grid, refines the best point by golden-section search and
/// returns the certificate at the maximizing ρ.
pub fn certify(ss: &SteadyState, points: usize) -> Result<ConvergenceCertificate> {
    let (a_bar, b_bar, theta) = (&ss.a_bar, &ss.b_bar, ss.theta);
    let sweep = certificate_sweep(ss, points)?;
    let (best, _) = sweep
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bm), (i, &(_, m))| if m > bm { (i, m) } else { (bi, bm) });
    if theta == 0.0 || sweep.len() < 3 {
        return certify_at(a_bar, b_bar, theta, sweep[best].0);
    }
    let lo = sweep[best.saturating_sub(1)].0;
    let hi = sweep[(best + 1).min(sweep.len() - 1)].0;
    let rho = golden_max(|r| margin_or_neg_inf(a_bar, b_bar, theta, r), lo, hi, 80);
    let refined = certify_at(a_bar, b_bar, theta, rho)?;
    if refined.margin >= sweep[best].1 {
        Ok(refined)
    } else {
        certify_at(a_bar, b_bar, theta, sweep[best].0)
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iterations: usize) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iterations {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        }
    }
    0.5 * (a + b)
}

/// Limit of the steady backward iteration `X ← Θ(X)` from `X = θI`.
#[derive(Debug, Clone)]
pub struct SteadyBackward {
    pub x: SymMatrix,
    /// `Ω⁻¹ = X − θI`.
    pub omega_inv: SymMatrix,
    pub iterations: usize,
    /// A holding certificate was supplied.
    pub certified: bool,
    /// Iterations with `min_eig(X_{k+1} − X_k) < −1e-12·(1 + ‖X_k‖)`.
    pub monotone_violations: usize,
    /// Iterates leaving `θI ⪯ X ⪯ Σ_ρ` (only checked with a certificate).
    pub containment_violations: usize,
    /// `‖X − Θ(X)‖_F / (1 + ‖X‖_F)`.
    pub residual: f64,
}

/// Iterates `X ← Θ(X)` from `X = θI` until the relative change drops below
/// `tol`.
///
/// With `certificate = None` the iteration runs uncertified and the result is
/// flagged `certified = false`; a certificate that does not hold is rejected.
pub fn steady_backward(
    ss: &SteadyState,
    tol: f64,
    certificate: Option<&ConvergenceCertificate>,
) -> Result<SteadyBackward> {
    if let Some(cert) = certificate {
        if !cert.holds {
            return Err(Error::domain(
                "steady_backward",
                format!("certificate does not hold (margin {:e} at ρ = {})", cert.margin, cert.rho),
            ));
        }
    }
    let (a_bar, b_bar, theta) = (&ss.a_bar, &ss.b_bar, ss.theta);
    let n = a_bar.nrows();
    let floor = SymMatrix::scaled_identity(n, theta);
    let mut x = floor.clone();
    let mut monotone_violations = 0;
    let mut containment_violations = 0;
    let mut change = f64::INFINITY;
    for k in 1..=MAX_STEADY_STEPS {
        let next = theta_map(&x, a_bar, b_bar, theta)?;
        let step = SymMatrix::symmetrized(next.as_matrix() - x.as_matrix());
        if numerics::min_eig_sym(&step) < -psd_tolerance(&x) {
            monotone_violations += 1;
        }
        if let Some(cert) = certificate {
            let above = SymMatrix::symmetrized(next.as_matrix() - floor.as_matrix());
            let below = SymMatrix::symmetrized(cert.sigma_rho.as_matrix() - next.as_matrix());
            let slack = 1e-10 * (1.0 + cert.sigma_rho.norm());
            if numerics::min_eig_sym(&above) < -slack || numerics::min_eig_sym(&below) < -slack {
                containment_violations += 1;
            }
        }
        change = relative_change(next.as_matrix(), x.as_matrix());
        x = next;
        if change < tol || x.norm() == 0.0 {
            let residual = (x.as_matrix() - theta_map(&x, a_bar, b_bar, theta)?.as_matrix()).norm() / (1.0 + x.norm());
            let omega_inv = x.add_identity(-theta);
            return Ok(SteadyBackward {
                x,
                omega_inv,
                iterations: k,
                certified: certificate.is_some(),
                monotone_violations,
                containment_violations,
                residual,
            });
        }
    }
    Err(Error::NoConvergence {
        context: "steady backward iteration".into(),
        iterations: MAX_STEADY_STEPS,
        last_change: change,
    })
}

/// Feedback of the algebraic equation at `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizingCheck {
    /// `J = Āᵀ X B̄ (B̄ᵀ X B̄ − I)⁻¹`.
    pub j: DMatrix<f64>,
    /// `Āᵀ − J B̄ᵀ`.
    pub m: DMatrix<f64>,
    pub eigenvalues: Vec<Complex<f64>>,
    pub spectral_radius: f64,
    pub stable: bool,
}

pub fn stabilizing_check(x: &SymMatrix, a_bar: &DMatrix<f64>, b_bar: &DMatrix<f64>) -> Result<StabilizingCheck> {
    let xb = x.as_matrix() * b_bar;
    let inner = SymMatrix::symmetrized(b_bar.transpose() * &xb - DMatrix::identity(b_bar.ncols(), b_bar.ncols()));
    let inner_inv = numerics::guarded_inverse(&inner, "B̄ᵀXB̄ − I")?;
    let j = a_bar.transpose() * &xb * inner_inv.as_matrix();
    let m = a_bar.transpose() - &j * b_bar.transpose();
    let eigenvalues = numerics::eigenvalues(&m)?;
    let spectral_radius = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(StabilizingCheck { j, m, eigenvalues, spectral_radius, stable: spectral_radius < 1.0 })
}

/// The augmented least favorable model at one time step (or its stationary
/// limit).
#[derive(Debug, Clone, PartialEq)]
pub struct LeastFavorableModel {
    pub a_tilde: DMatrix<f64>,
    pub b_tilde: DMatrix<f64>,
    pub c_tilde: DMatrix<f64>,
    pub d_tilde: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub k_tilde: SymMatrix,
    pub l: DMatrix<f64>,
    /// `Ω⁻¹` the model was built from (`Ω_{t+1}⁻¹` in the time-varying case).
    pub omega_inv: SymMatrix,
    pub stationary: bool,
}

impl LeastFavorableModel {
    pub fn state_dim(&self) -> usize {
        self.a_tilde.nrows()
    }
}

fn build(
    model: &StateSpaceModel,
    gain: &DMatrix<f64>,
    x: &SymMatrix,
    omega_inv: SymMatrix,
    stationary: bool,
) -> Result<LeastFavorableModel> {
    let (n, m) = (model.n(), model.m());
    if gain.nrows() != n || gain.ncols() != model.p() {
        return Err(Error::dims(
            "least favorable gain",
            format!("{n}x{}", model.p()),
            format!("{}x{}", gain.nrows(), gain.ncols()),
        ));
    }
    let a_bar = model.a() - gain * model.c();
    let b_bar = model.b() - gain * model.d();
    let xb = x.as_matrix() * &b_bar;
    let s = DMatrix::identity(m, m) - b_bar.transpose() * &xb;
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite { min_eig: numerics::min_eig_sym(&SymMatrix::symmetrized(s)) })?;
    let k_tilde = SymMatrix::symmetrized(chol.inverse());
    let l = numerics::symmetric_factor(&k_tilde)?;
    let h = k_tilde.as_matrix() * xb.transpose() * &a_bar;

    let mut a_tilde = DMatrix::zeros(2 * n, 2 * n);
    a_tilde.view_mut((0, 0), (n, n)).copy_from(model.a());
    a_tilde.view_mut((0, n), (n, n)).copy_from(&(model.b() * &h));
    a_tilde.view_mut((n, n), (n, n)).copy_from(&(&a_bar + &b_bar * &h));
    let mut stack = DMatrix::zeros(2 * n, m);
    stack.view_mut((0, 0), (n, m)).copy_from(model.b());
    stack.view_mut((n, 0), (n, m)).copy_from(&b_bar);
    let b_tilde = stack * &l;
    let mut c_tilde = DMatrix::zeros(model.p(), 2 * n);
    c_tilde.view_mut((0, 0), (model.p(), n)).copy_from(model.c());
    c_tilde.view_mut((0, n), (model.p(), n)).copy_from(&(model.d() * &h));
    let d_tilde = model.d() * &l;
    Ok(LeastFavorableModel { a_tilde, b_tilde, c_tilde, d_tilde, h, k_tilde, l, omega_inv, stationary })
}

/// Stationary least favorable model from the steady robust filter and the
/// backward limit `X = Ω⁻¹ + θI`.
pub fn assemble(model: &StateSpaceModel, ss: &SteadyState, x: &SymMatrix) -> Result<LeastFavorableModel> {
    build(model, &ss.gain, x, x.add_identity(-ss.theta), true)
}

/// One model per step `t = 0..T−1`, built from `G_t`, `θ_t` and `Ω_{t+1}⁻¹`.
pub fn assemble_time_varying(
    model: &StateSpaceModel,
    forward: &RobustTrajectory,
    backward: &[BackwardIterate],
) -> Result<Vec<LeastFavorableModel>> {
    if backward.len() != forward.horizon() + 1 {
        return Err(Error::dims("assemble_time_varying", forward.horizon() + 1, backward.len()));
    }
    forward
        .steps
        .iter()
        .enumerate()
        .map(|(t, step)| {
            let next = &backward[t + 1];
            let x = next.omega_inv.add_identity(step.theta);
            build(model, &step.gain, &x, next.omega_inv.clone(), false)
        })
        .collect()
}

/// Closed-form analysis of the scalar algebraic equation
/// `b̄²x² − (1 − ā² + b̄²θ)x + θ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarRootAnalysis {
    pub abar: f64,
    pub bbar: f64,
    pub theta: f64,
    /// Larger root.
    pub x1: f64,
    /// Smaller root.
    pub x2: f64,
    /// `j_i = ā x_i b̄ / (b̄² x_i − 1)`.
    pub j1: f64,
    pub j2: f64,
    /// `f_i = ā − j_i b̄`.
    pub f1: f64,
    pub f2: f64,
    /// Limit of `x ← Θ(x)` from `x = θ`.
    pub iteration_limit: f64,
    pub iterations: usize,
    /// `1 − ā² + b̄²θ`, the linear coefficient of the quadratic.
    pub linear_coefficient: f64,
    /// `1 − ā² − b̄²θ`, the quantity whose positivity is assumed for two
    /// positive roots.
    pub positivity_coefficient: f64,
}

impl ScalarRootAnalysis {
    /// Index (1 or 2) of the root whose feedback `|f_i| < 1`, if exactly one.
    pub fn stabilizing_root(&self) -> Option<u8> {
        match (self.f1.abs() < 1.0, self.f2.abs() < 1.0) {
            (true, false) => Some(1),
            (false, true) => Some(2),
            _ => None,
        }
    }

    /// `b̄²x² − (1 − ā² + b̄²θ)x + θ`.
    pub fn quadratic(&self, x: f64) -> f64 {
        self.bbar * self.bbar * x * x - self.linear_coefficient * x + self.theta
    }
}

pub fn scalar_oracle(abar: f64, bbar: f64, theta: f64) -> Result<ScalarRootAnalysis> {
    if !(abar.is_finite() && bbar.is_finite() && theta.is_finite()) {
        return Err(Error::NonFinite("scalar_oracle arguments".into()));
    }
    if bbar == 0.0 || !(theta > 0.0) {
        return Err(Error::domain("scalar_oracle", "need b̄ ≠ 0 and θ > 0"));
    }
    let b2 = bbar * bbar;
    let linear_coefficient = 1.0 - abar * abar + b2 * theta;
    let positivity_coefficient = 1.0 - abar * abar - b2 * theta;
    let discriminant = linear_coefficient * linear_coefficient - 4.0 * b2 * theta;
    if !(discriminant > 0.0) {
        return Err(Error::NoRealRoots { discriminant });
    }
    if !(positivity_coefficient > 0.0) {
        return Err(Error::domain("scalar_oracle", format!("1 − ā² − b̄²θ = {positivity_coefficient} is not positive")));
    }
    let x1 = (linear_coefficient + discriminant.sqrt()) / (2.0 * b2);
    let x2 = theta / (b2 * x1);
    let feedback = |x: f64| {
        let j = abar * x * bbar / (b2 * x - 1.0);
        (j, abar - j * bbar)
    };
    let (j1, f1) = feedback(x1);
    let (j2, f2) = feedback(x2);

    let (a, b) = (DMatrix::from_element(1, 1, abar), DMatrix::from_element(1, 1, bbar));
    let mut x = SymMatrix::scaled_identity(1, theta);
    let mut iterations = 0;
    loop {
        let next = theta_map(&x, &a, &b, theta)?;
        iterations += 1;
        let change = relative_change(next.as_matrix(), x.as_matrix());
        x = next;
        if change < 1e-15 || iterations >= MAX_STEADY_STEPS {
            break;
        }
    }
    Ok(ScalarRootAnalysis {
        abar,
        bbar,
        theta,
        x1,
        x2,
        j1,
        j2,
        f1,
        f2,
        iteration_limit: x[(0, 0)],
        iterations,
        linear_coefficient,
        positivity_coefficient,
    })
}

/// A sampled path of the least favorable model.
#[derive(Debug, Clone, PartialEq)]
pub struct LfSample {
    /// `ξ_0..=ξ_T`.
    pub xi: Vec<DVector<f64>>,
    /// `y_0..y_{T−1}`.
    pub y: Vec<DVector<f64>>,
}

/// Simulates the stationary least favorable model for `horizon` steps.
///
/// `ξ_0 = [x_0; x_0]` with `x_0 ~ N(0, P_0)`: the filter starts at
/// `x̂_0 = 0`, so its error equals the initial state.
pub fn simulate_lf(lf: &LeastFavorableModel, p0: &SymMatrix, horizon: usize, seed: u64) -> Result<LfSample> {
    let n2 = lf.state_dim();
    let n = n2 / 2;
    if p0.dim() != n {
        return Err(Error::dims("simulate_lf P0", format!("{n}x{n}"), format!("{0}x{0}", p0.dim())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |len: usize| DVector::from_fn(len, |_, _| StandardNormal.sample(&mut rng));
    let x0 = numerics::psd_factor(p0) * normal(n);
    let mut xi = DVector::zeros(n2);
    xi.rows_mut(0, n).copy_from(&x0);
    xi.rows_mut(n, n).copy_from(&x0);
    let m = lf.b_tilde.ncols();
    let mut xis = Vec::with_capacity(horizon + 1);
    let mut ys = Vec::with_capacity(horizon);
    xis.push(xi.clone());
    for _ in 0..horizon {
        let eps = normal(m);
        ys.push(&lf.c_tilde * &xi + &lf.d_tilde * &eps);
        xi = &lf.a_tilde * &xi + &lf.b_tilde * &eps;
        xis.push(xi.clone());
    }
    Ok(LfSample { xi: xis, y: ys })
}
