//! Forward robust filter recursion.
//!
//! ```text
//! G_t     = A V_t Cᵀ (C V_t Cᵀ + DDᵀ)⁻¹
//! x̂_{t+1} = A x̂_t + G_t (y_t − C x̂_t)
//! P_{t+1} = A (V_t⁻¹ + Cᵀ(DDᵀ)⁻¹C)⁻¹ Aᵀ + BBᵀ
//! V_{t+1} = (P_{t+1}⁻¹ − θ_t I)⁻¹,      c = γ(P_{t+1}, θ_t)
//! ```
//!
//! with `x̂_0 = 0` and `V_0 = P_0`. At zero tolerance `θ_t = 0` and this is the
//! Kalman predictor.

use nalgebra::{DMatrix, DVector};

use crate::divergence;
use crate::error::{Error, Result};
use crate::model::{
    predictor_update, relative_change, KlScale, StateSpaceModel, Tolerance, MAX_STEADY_STEPS, STATIONARITY_TOL,
    STATIONARY_STREAK,
};
use crate::numerics::{self, SymMatrix};

/// Below this `γ` target the risk parameter is set to zero exactly.
pub const DEGENERATE_C: f64 = 1e-13;

/// Norm beyond which the covariance recursion is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// One application of the recursion at time `t`: from `V_t` to `V_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustFilterStep {
    pub t: usize,
    /// `G_t`, computed from `V_t`.
    pub gain: DMatrix<f64>,
    /// `θ_t`, the root of `c = γ(P_{t+1}, θ_t)`.
    pub theta: f64,
    /// `P_{t+1}`.
    pub p_next: SymMatrix,
    /// `V_{t+1}`.
    pub v_next: SymMatrix,
}

/// `(P⁻¹ − θI)⁻¹ = P (I − θP)⁻¹`, evaluated on the eigenbasis of `P` so that
/// singular `P` is handled.
pub fn inflate(p: &SymMatrix, theta: f64) -> Result<SymMatrix> {
    if theta == 0.0 {
        return Ok(p.clone());
    }
    let eig = numerics::eigen_sym(p);
    let mut scaled = eig.eigenvalues.clone();
    for l in scaled.iter_mut() {
        let denom = 1.0 - theta * *l;
        if !(denom > 1e-12) {
            return Err(Error::NearSingular { context: "(P⁻¹ − θI) in V update".into(), eigenvalue: denom });
        }
        *l /= denom;
    }
    let v = &eig.eigenvectors;
    Ok(SymMatrix::symmetrized(v * DMatrix::from_diagonal(&scaled) * v.transpose()))
}

/// Solves for `θ`, honouring the exact degenerate case.
fn risk_parameter(p_next: &SymMatrix, gamma_target: f64) -> Result<f64> {
    if gamma_target < DEGENERATE_C || p_next.norm() == 0.0 {
        return Ok(0.0);
    }
    Ok(divergence::solve_theta(p_next, gamma_target)?.theta)
}

/// Advances the recursion one step from `V_t`.
pub fn forward_step(t: usize, v: &SymMatrix, model: &StateSpaceModel, tol: &Tolerance) -> Result<RobustFilterStep> {
    step_with_target(t, v, model, tol.gamma_target())
}

fn step_with_target(t: usize, v: &SymMatrix, model: &StateSpaceModel, gamma_target: f64) -> Result<RobustFilterStep> {
    let (gain, p_next) = predictor_update(model, v)?;
    let norm = p_next.norm();
    if !norm.is_finite() || norm > DIVERGENCE_NORM {
        return Err(Error::Diverged { step: t, norm });
    }
    let theta = risk_parameter(&p_next, gamma_target)?;
    let v_next = inflate(&p_next, theta)?;
    Ok(RobustFilterStep { t, gain, theta, p_next, v_next })
}

/// A forward run over `[0, T]`.
#[derive(Debug, Clone)]
pub struct RobustTrajectory {
    /// `V_0 = P_0`.
    pub initial: SymMatrix,
    pub steps: Vec<RobustFilterStep>,
    /// First step index after which `P_t` stayed stationary for
    /// `STATIONARY_STREAK` consecutive steps, if that happened.
    pub converged_at: Option<usize>,
}

impl RobustTrajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// `P_t` for `t = 0..=T`.
    pub fn p(&self, t: usize) -> &SymMatrix {
        if t == 0 {
            &self.initial
        } else {
            &self.steps[t - 1].p_next
        }
    }

    /// `V_t` for `t = 0..=T`.
    pub fn v(&self, t: usize) -> &SymMatrix {
        if t == 0 {
            &self.initial
        } else {
            &self.steps[t - 1].v_next
        }
    }

    pub fn gains(&self) -> Vec<DMatrix<f64>> {
        self.steps.iter().map(|s| s.gain.clone()).collect()
    }

    pub fn converged(&self) -> bool {
        self.converged_at.is_some()
    }
}

/// Runs `horizon` forward steps from `V_0 = P_0 = p0`.
pub fn run_forward(
    model: &StateSpaceModel,
    p0: &SymMatrix,
    tol: &Tolerance,
    horizon: usize,
) -> Result<RobustTrajectory> {
    run_with_target(model, p0, tol.gamma_target(), horizon)
}

fn run_with_target(
    model: &StateSpaceModel,
    p0: &SymMatrix,
    gamma_target: f64,
    horizon: usize,
) -> Result<RobustTrajectory> {
    if p0.dim() != model.n() {
        return Err(Error::dims("run_forward P0", format!("{0}x{0}", model.n()), format!("{0}x{0}", p0.dim())));
    }
    if horizon == 0 {
        return Err(Error::domain("run_forward", "horizon must be at least 1"));
    }
    let mut steps: Vec<RobustFilterStep> = Vec::with_capacity(horizon);
    let mut v = p0.clone();
    let mut p_prev = p0.clone();
    let mut streak = 0;
    let mut converged_at = None;
    for t in 0..horizon {
        let step = step_with_target(t, &v, model, gamma_target)?;
        let change = relative_change(step.p_next.as_matrix(), p_prev.as_matrix());
        streak = if change < STATIONARITY_TOL { streak + 1 } else { 0 };
        if streak >= STATIONARY_STREAK && converged_at.is_none() {
            converged_at = Some(t);
        }
        p_prev = step.p_next.clone();
        v = step.v_next.clone();
        steps.push(step);
    }
    Ok(RobustTrajectory { initial: p0.clone(), steps, converged_at })
}

/// Fixed point of the forward recursion.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub p: SymMatrix,
    pub v: SymMatrix,
    pub theta: f64,
    pub gain: DMatrix<f64>,
    /// `Ā = A − G C`.
    pub a_bar: DMatrix<f64>,
    /// `B̄ = B − G D`.
    pub b_bar: DMatrix<f64>,
    pub iterations: usize,
    pub spectral_radius: f64,
    /// Relative residual of `P = A (P⁻¹ − θI + Cᵀ(DDᵀ)⁻¹C)⁻¹ Aᵀ + BBᵀ`.
    pub riccati_residual: f64,
}

/// `‖P − A (P⁻¹ − θI + Cᵀ(DDᵀ)⁻¹C)⁻¹ Aᵀ − BBᵀ‖_F / (1 + ‖P‖_F)`, evaluated
/// with explicit inverses (independent of the covariance form used by the
/// recursion).
pub fn riccati_residual(model: &StateSpaceModel, p: &SymMatrix, theta: f64) -> Result<f64> {
    let p_inv = numerics::guarded_inverse(p, "P⁻¹ in Riccati residual")?;
    let r_inv = numerics::guarded_inverse(&model.measurement_noise(), "(DDᵀ)⁻¹")?;
    let info = SymMatrix::symmetrized(
        p_inv.add_identity(-theta).as_matrix() + model.c().transpose() * r_inv.as_matrix() * model.c(),
    );
    let inner = numerics::guarded_inverse(&info, "P⁻¹ − θI + Cᵀ(DDᵀ)⁻¹C")?;
    let rhs = inner.congruence(model.a()).as_matrix() + model.process_noise().as_matrix();
    Ok((p.as_matrix() - rhs).norm() / (1.0 + p.norm()))
}

/// Iterates the forward recursion from the model's `P0` to stationarity.
///
/// `stationarity` is the relative Frobenius change threshold (the default is
/// [`STATIONARITY_TOL`]); it must hold for `STATIONARY_STREAK` consecutive
/// steps.
pub fn steady_state(model: &StateSpaceModel, tol: &Tolerance, stationarity: f64) -> Result<SteadyState> {
    steady_from(model, model.p0(), tol.gamma_target(), stationarity)
}

pub(crate) fn steady_from(
    model: &StateSpaceModel,
    p0: &SymMatrix,
    gamma_target: f64,
    stationarity: f64,
) -> Result<SteadyState> {
    let mut v = p0.clone();
    let mut p_prev = p0.clone();
    let mut streak = 0;
    let mut change = f64::INFINITY;
    let mut last: Option<RobustFilterStep> = None;
    for t in 0..MAX_STEADY_STEPS {
        let step = step_with_target(t, &v, model, gamma_target)?;
        change = relative_change(step.p_next.as_matrix(), p_prev.as_matrix());
        streak = if change < stationarity { streak + 1 } else { 0 };
        p_prev = step.p_next.clone();
        v = step.v_next.clone();
        last = Some(step);
        if streak >= STATIONARY_STREAK {
            break;
        }
    }
    if streak < STATIONARY_STREAK {
        return Err(Error::NoConvergence {
            context: "robust filter steady state".into(),
            iterations: MAX_STEADY_STEPS,
            last_change: change,
        });
    }
    let last = last.expect("at least one step");
    let iterations = last.t + 1;
    // Gain and θ consistent with the stationary pair (P, V).
    let fixed = step_with_target(iterations, &last.v_next, model, gamma_target)?;
    let p = fixed.p_next;
    let theta = fixed.theta;
    let v = fixed.v_next;
    let gain = fixed.gain;
    let a_bar = model.a() - &gain * model.c();
    let b_bar = model.b() - &gain * model.d();
    let spectral_radius = numerics::spectral_radius(&a_bar)?;
    if spectral_radius >= 1.0 {
        return Err(Error::NotStable { radius: spectral_radius });
    }
    let riccati_residual = riccati_residual(model, &p, theta)?;
    if riccati_residual > 1e-10 {
        return Err(Error::NoConvergence {
            context: format!("robust filter steady state (Riccati residual {riccati_residual:e})"),
            iterations,
            last_change: change,
        });
    }
    Ok(SteadyState { p, v, theta, gain, a_bar, b_bar, iterations, spectral_radius, riccati_residual })
}

/// Empirical ceiling on the tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct CMaxEstimate {
    /// Largest probed `c` for which the recursion converged from every
    /// starting covariance.
    pub c_max: f64,
    pub scale: KlScale,
    /// Always true: this is a convergence-probing estimate, not a certified
    /// bound.
    pub empirical: bool,
    /// The bracket's upper end still converged, so the estimate is the
    /// bracket ceiling rather than a detected boundary.
    pub ceiling_reached: bool,
    /// Smallest probed `c` that failed, if any.
    pub first_failure: Option<f64>,
    pub failure_mode: Option<String>,
    pub probes: usize,
}

/// Step budget for one convergence probe.
const PROBE_STEPS: usize = 20_000;

fn probe_converges(model: &StateSpaceModel, gamma_target: f64) -> std::result::Result<(), String> {
    let n = model.n();
    for scale in [1.0, 0.1, 10.0] {
        let p0 = SymMatrix::scaled_identity(n, scale);
        match steady_probe(model, &p0, gamma_target) {
            Ok(()) => {}
            Err(e) => return Err(e.to_string()),
        }
    }
    Ok(())
}

fn steady_probe(model: &StateSpaceModel, p0: &SymMatrix, gamma_target: f64) -> Result<()> {
    let mut v = p0.clone();
    let mut p_prev = p0.clone();
    let mut streak = 0;
    let mut change = f64::INFINITY;
    for t in 0..PROBE_STEPS {
        let step = step_with_target(t, &v, model, gamma_target)?;
        change = relative_change(step.p_next.as_matrix(), p_prev.as_matrix());
        streak = if change < STATIONARITY_TOL { streak + 1 } else { 0 };
        if streak >= STATIONARY_STREAK {
            let a_bar = model.a() - &step.gain * model.c();
            let radius = numerics::spectral_radius(&a_bar)?;
            if radius >= 1.0 {
                return Err(Error::NotStable { radius });
            }
            return Ok(());
        }
        p_prev = step.p_next;
        v = step.v_next;
    }
    Err(Error::NoConvergence { context: "convergence probe".into(), iterations: PROBE_STEPS, last_change: change })
}

/// Estimates the largest tolerance for which the forward recursion converges,
/// by bisection over `bracket` (geometric midpoints when `lo > 0`).
///
/// Each probe runs the recursion from `I`, `0.1·I` and `10·I` and requires
/// stationarity plus a stable `A − GC` from all three.
pub fn estimate_c_max(
    model: &StateSpaceModel,
    bracket: (f64, f64),
    probes: usize,
    scale: KlScale,
) -> Result<CMaxEstimate> {
    let (c_lo, c_hi) = bracket;
    if !(c_lo > 0.0) || !(c_hi > c_lo) || !c_hi.is_finite() {
        return Err(Error::BracketInvalid { lo: c_lo, hi: c_hi, detail: "need 0 < c_lo < c_hi < ∞".into() });
    }
    if let Err(mode) = probe_converges(model, scale.to_gamma(c_lo)) {
        return Err(Error::BracketInvalid {
            lo: c_lo,
            hi: c_hi,
            detail: format!("recursion already fails at the lower end: {mode}"),
        });
    }
    if probe_converges(model, scale.to_gamma(c_hi)).is_ok() {
        return Ok(CMaxEstimate {
            c_max: c_hi,
            scale,
            empirical: true,
            ceiling_reached: true,
            first_failure: None,
            failure_mode: None,
            probes: 2,
        });
    }
    let (mut lo, mut hi) = (c_lo, c_hi);
    let mut failure_mode = probe_converges(model, scale.to_gamma(c_hi)).err();
    for _ in 0..probes {
        let mid = (lo * hi).sqrt();
        match probe_converges(model, scale.to_gamma(mid)) {
            Ok(()) => lo = mid,
            Err(mode) => {
                hi = mid;
                failure_mode = Some(mode);
            }
        }
    }
    Ok(CMaxEstimate {
        c_max: lo,
        scale,
        empirical: true,
        ceiling_reached: false,
        first_failure: Some(hi),
        failure_mode,
        probes: probes + 2,
    })
}

/// Replays a gain schedule against observations:
/// `x̂_{t+1} = A x̂_t + G_t (y_t − C x̂_t)` from `x̂_0 = 0`.
/// Returns `x̂_0..=x̂_T` for `T = ys.len()`.
pub fn filter_observations(
    gains: &[DMatrix<f64>],
    model: &StateSpaceModel,
    ys: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    if gains.len() < ys.len() {
        return Err(Error::dims("filter_observations", format!("at least {} gains", ys.len()), gains.len()));
    }
    let (n, p) = (model.n(), model.p());
    let mut xs = Vec::with_capacity(ys.len() + 1);
    let mut x = DVector::zeros(n);
    xs.push(x.clone());
    for (t, (g, y)) in gains.iter().zip(ys).enumerate() {
        if g.nrows() != n || g.ncols() != p {
            return Err(Error::dims(
                "filter_observations gain",
                format!("{n}x{p}"),
                format!("{}x{} at t = {t}", g.nrows(), g.ncols()),
            ));
        }
        if y.len() != p {
            return Err(Error::dims("filter_observations y", p, format!("{} at t = {t}", y.len())));
        }
        let innovation = y - model.c() * &x;
        x = model.a() * &x + g * innovation;
        xs.push(x.clone());
    }
    Ok(xs)
}
