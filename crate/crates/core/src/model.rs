//! Nominal state-space model, its standing assumptions, and the plain Kalman
//! predictor that the robust filter reduces to at zero tolerance.
//!
//! The model is
//!
//! ```text
//! x_{t+1} = A x_t + B v_t
//! y_t     = C x_t + D v_t,      v_t ~ N(0, I_m),  x_0 ~ N(0, P0)
//! ```
//!
//! Filtering code assumes the normalized form `B Dᵀ = 0` with `[B; D]`
//! square and invertible; [`normalize`] produces it.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::{self, SymMatrix};

/// Relative singular-value threshold for rank tests.
pub const RANK_RTOL: f64 = 1e-10;

/// Stationarity threshold shared by the forward recursions.
pub const STATIONARITY_TOL: f64 = 1e-12;
/// Consecutive stationary steps required before declaring convergence.
pub const STATIONARY_STREAK: usize = 10;
/// Step cap for steady-state searches.
pub const MAX_STEADY_STEPS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    p0: SymMatrix,
}

impl StateSpaceModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>, p0: SymMatrix) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::dims("model A", "n x n, n >= 1", format!("{}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::dims("model B", format!("{n} x m"), format!("{}x{}", b.nrows(), b.ncols())));
        }
        let m = b.ncols();
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::dims("model C", format!("p x {n}"), format!("{}x{}", c.nrows(), c.ncols())));
        }
        let p = c.nrows();
        if d.nrows() != p || d.ncols() != m {
            return Err(Error::dims("model D", format!("{p} x {m}"), format!("{}x{}", d.nrows(), d.ncols())));
        }
        if p0.dim() != n {
            return Err(Error::dims("model P0", format!("{n} x {n}"), format!("{0}x{0}", p0.dim())));
        }
        for (name, mat) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if !numerics::is_finite(mat) {
                return Err(Error::NonFinite(format!("model {name}")));
            }
        }
        let min_p0 = numerics::min_eig_sym(&p0);
        if min_p0 < -1e-12 * (1.0 + p0.norm()) {
            return Err(Error::domain("model P0", format!("P0 must be PSD (min eigenvalue {min_p0:e})")));
        }
        Ok(Self { a, b, c, d, p0 })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn p0(&self) -> &SymMatrix {
        &self.p0
    }

    /// State dimension n.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    /// Noise dimension m.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    /// Output dimension p.
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// Process noise covariance `B Bᵀ`.
    pub fn process_noise(&self) -> SymMatrix {
        SymMatrix::gram(&self.b)
    }

    /// Measurement noise covariance `D Dᵀ`.
    pub fn measurement_noise(&self) -> SymMatrix {
        SymMatrix::gram(&self.d)
    }

    /// The stacked noise injection `[B; D]`.
    pub fn noise_stack(&self) -> DMatrix<f64> {
        let (n, p, m) = (self.n(), self.p(), self.m());
        let mut s = DMatrix::zeros(n + p, m);
        s.view_mut((0, 0), (n, m)).copy_from(&self.b);
        s.view_mut((n, 0), (p, m)).copy_from(&self.d);
        s
    }

    pub fn with_p0(&self, p0: SymMatrix) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), self.c.clone(), self.d.clone(), p0)
    }

    /// True when `B Dᵀ = 0` (to `1e-12`) and `[B; D]` is square and
    /// invertible.
    pub fn is_normalized(&self) -> bool {
        let cross = (&self.b * self.d.transpose()).norm();
        let stack = self.noise_stack();
        cross <= 1e-12 * (1.0 + self.b.norm() * self.d.norm())
            && stack.nrows() == stack.ncols()
            && numerics::numerical_rank(&stack, RANK_RTOL) == stack.nrows()
    }
}

/// Kullback-Leibler scale in which a tolerance is expressed.
///
/// `Standard` is the divergence itself (the `½` convention used by
/// [`crate::divergence::gamma`]). `Doubled` measures the same ball as twice
/// the divergence, `½·log det` dropped to `log det`; published tables for
/// this filter are often quoted that way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlScale {
    #[default]
    Standard,
    Doubled,
}

impl KlScale {
    /// Converts a tolerance in this scale to the `γ` target value.
    pub fn to_gamma(self, c: f64) -> f64 {
        match self {
            KlScale::Standard => c,
            KlScale::Doubled => 0.5 * c,
        }
    }

    pub fn from_gamma(self, g: f64) -> f64 {
        match self {
            KlScale::Standard => g,
            KlScale::Doubled => 2.0 * g,
        }
    }
}

/// Radius of the Kullback-Leibler ball around the nominal transition density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    c: f64,
    scale: KlScale,
    ceiling: Option<f64>,
}

impl Tolerance {
    pub fn new(c: f64) -> Result<Self> {
        Self::with_scale(c, KlScale::Standard)
    }

    pub fn with_scale(c: f64, scale: KlScale) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::domain("Tolerance", format!("c must be positive and finite, got {c}")));
        }
        Ok(Self { c, scale, ceiling: None })
    }

    /// Attaches a ceiling estimate; rejects `c` above it.
    pub fn with_ceiling(mut self, c_max: f64) -> Result<Self> {
        if self.c > c_max {
            return Err(Error::domain("Tolerance", format!("c = {} exceeds the attached ceiling {c_max}", self.c)));
        }
        self.ceiling = Some(c_max);
        Ok(self)
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn scale(&self) -> KlScale {
        self.scale
    }

    pub fn ceiling(&self) -> Option<f64> {
        self.ceiling
    }

    /// The value `γ(P, θ)` must reach at each step.
    pub fn gamma_target(&self) -> f64 {
        self.scale.to_gamma(self.c)
    }
}

/// Rank diagnostics of a nominal model.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub n: usize,
    pub reachability_rank: usize,
    pub observability_rank: usize,
}

impl ValidationReport {
    pub fn reachable(&self) -> bool {
        self.reachability_rank == self.n
    }

    pub fn observable(&self) -> bool {
        self.observability_rank == self.n
    }

    pub fn passes(&self) -> bool {
        self.reachable() && self.observable()
    }

    /// One error per failed test, reachability first.
    pub fn failures(&self) -> Vec<Error> {
        let mut out = Vec::new();
        if !self.reachable() {
            out.push(Error::NotReachable { rank: self.reachability_rank, n: self.n });
        }
        if !self.observable() {
            out.push(Error::NotObservable { rank: self.observability_rank, n: self.n });
        }
        out
    }
}

/// `[B, AB, …, A^{n−1}B]`.
pub fn reachability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    out
}

/// `[C; CA; …; CA^{n−1}]`.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    reachability_matrix(&a.transpose(), &c.transpose()).transpose()
}

/// Rank diagnostics without failing.
pub fn diagnose(model: &StateSpaceModel) -> ValidationReport {
    ValidationReport {
        n: model.n(),
        reachability_rank: numerics::numerical_rank(&reachability_matrix(model.a(), model.b()), RANK_RTOL),
        observability_rank: numerics::numerical_rank(&observability_matrix(model.a(), model.c()), RANK_RTOL),
    }
}

/// Checks reachability of `(A, B)` and observability of `(A, C)`.
pub fn validate(model: &StateSpaceModel) -> Result<ValidationReport> {
    let report = diagnose(model);
    match report.failures().into_iter().next() {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Output of [`normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    /// Equivalent model with `B Dᵀ = 0` and `[B; D]` square invertible.
    pub model: StateSpaceModel,
    /// `B Dᵀ (D Dᵀ)⁻¹` of the input model: removing the noise correlation
    /// makes the observation enter the state equation as the known input
    /// `output_injection · y_t`. Zero when the input was already decorrelated.
    pub output_injection: DMatrix<f64>,
}

/// Rewrites a model into the normalized form assumed by the filter.
///
/// Two steps: decorrelate process and measurement noise, then compress the
/// noise channels so the stack `[B; D]` becomes the lower Cholesky factor of
/// its `(n+p) × (n+p)` Gram matrix. Models that already satisfy both
/// conditions are returned unchanged.
pub fn normalize(model: &StateSpaceModel) -> Result<Normalization> {
    let (n, p) = (model.n(), model.p());
    let r = model.measurement_noise();
    if numerics::numerical_rank(r.as_matrix(), RANK_RTOL) < p {
        return Err(Error::DegenerateNoise("D Dᵀ is singular".into()));
    }
    let zero_injection = DMatrix::zeros(n, p);
    if model.is_normalized() {
        return Ok(Normalization { model: model.clone(), output_injection: zero_injection });
    }

    let r_inv = numerics::guarded_inverse(&r, "(D Dᵀ)⁻¹")?;
    let cross = model.b() * model.d().transpose();
    let decorrelated = cross.norm() > 1e-12 * (1.0 + model.b().norm() * model.d().norm());
    let (a, b_check, injection) = if decorrelated {
        let injection = &cross * r_inv.as_matrix();
        let a = model.a() - &injection * model.c();
        // B(I − Dᵀ(DDᵀ)⁻¹D)
        let proj = DMatrix::identity(model.m(), model.m()) - model.d().transpose() * r_inv.as_matrix() * model.d();
        (a, model.b() * proj, injection)
    } else {
        (model.a().clone(), model.b().clone(), zero_injection)
    };

    let mut stack = DMatrix::zeros(n + p, model.m());
    stack.view_mut((0, 0), (n, model.m())).copy_from(&b_check);
    stack.view_mut((n, 0), (p, model.m())).copy_from(model.d());
    let gram = SymMatrix::gram(&stack);
    if numerics::numerical_rank(gram.as_matrix(), RANK_RTOL) < n + p {
        return Err(Error::DegenerateNoise(format!("noise Gram matrix of [B; D] has rank below n + p = {}", n + p)));
    }
    let factor = numerics::symmetric_factor(&gram)
        .map_err(|_| Error::DegenerateNoise("noise Gram matrix of [B; D] is not positive definite".into()))?;
    let b_new = factor.rows(0, n).into_owned();
    let mut d_new = factor.rows(n, p).into_owned();
    // Cholesky of a block-diagonal Gram is block diagonal; clear round-off in
    // the D block's leading columns so B Dᵀ = 0 holds exactly.
    d_new.columns_mut(0, n).fill(0.0);

    let model = StateSpaceModel::new(a, b_new, model.c().clone(), d_new, model.p0().clone())?;
    Ok(Normalization { model, output_injection: injection })
}

/// One prediction step of the Kalman predictor at prior covariance `v`.
///
/// Returns `G = A V Cᵀ (C V Cᵀ + D Dᵀ)⁻¹` and
/// `A (V⁻¹ + Cᵀ(DDᵀ)⁻¹C)⁻¹ Aᵀ + BBᵀ`, the latter evaluated in covariance
/// form `A (V − V Cᵀ (C V Cᵀ + DDᵀ)⁻¹ C V) Aᵀ + BBᵀ` so singular `V` is fine.
pub(crate) fn predictor_update(model: &StateSpaceModel, v: &SymMatrix) -> Result<(DMatrix<f64>, SymMatrix)> {
    let (a, c) = (model.a(), model.c());
    let vct = v.as_matrix() * c.transpose();
    let innov = SymMatrix::symmetrized(c * &vct + model.measurement_noise().as_matrix());
    // K = V Cᵀ S⁻¹, via S Kᵀ = C V
    let kt = numerics::spd_solve(&innov, &vct.transpose(), "innovation covariance C V Cᵀ + D Dᵀ")?;
    let k = kt.transpose();
    let gain = a * &k;
    let filtered = SymMatrix::symmetrized(v.as_matrix() - &k * vct.transpose());
    let p_next = SymMatrix::symmetrized(a * filtered.as_matrix() * a.transpose() + model.process_noise().as_matrix());
    Ok((gain, p_next))
}

/// Time-varying and steady Kalman predictor quantities (zero tolerance).
#[derive(Debug, Clone)]
pub struct KalmanSchedule {
    /// `G_t` for `t = 0..T−1`.
    pub gains: Vec<DMatrix<f64>>,
    /// `P_t` for `t = 0..T`.
    pub covariances: Vec<SymMatrix>,
    pub steady: KalmanSteady,
}

#[derive(Debug, Clone)]
pub struct KalmanSteady {
    pub p: SymMatrix,
    pub gain: DMatrix<f64>,
    pub iterations: usize,
}

/// Relative Frobenius change used by every stationarity test.
pub(crate) fn relative_change(next: &DMatrix<f64>, prev: &DMatrix<f64>) -> f64 {
    (next - prev).norm() / (1.0 + prev.norm())
}

/// Steady Kalman predictor covariance by iterating the predictor from `P0`.
pub fn kalman_steady(model: &StateSpaceModel) -> Result<KalmanSteady> {
    let mut p = model.p0().clone();
    let mut streak = 0;
    let mut change = f64::INFINITY;
    for it in 1..=MAX_STEADY_STEPS {
        let (_, next) = predictor_update(model, &p)?;
        change = relative_change(next.as_matrix(), p.as_matrix());
        p = next;
        streak = if change < STATIONARITY_TOL { streak + 1 } else { 0 };
        if streak >= STATIONARY_STREAK {
            let (gain, _) = predictor_update(model, &p)?;
            return Ok(KalmanSteady { p, gain, iterations: it });
        }
    }
    Err(Error::NoConvergence {
        context: "Kalman steady state".into(),
        iterations: MAX_STEADY_STEPS,
        last_change: change,
    })
}

/// The Kalman predictor over `[0, T]` plus its steady limit.
pub fn kalman_gain_schedule(model: &StateSpaceModel, horizon: usize) -> Result<KalmanSchedule> {
    let mut covariances = Vec::with_capacity(horizon + 1);
    let mut gains = Vec::with_capacity(horizon);
    let mut p = model.p0().clone();
    for _ in 0..horizon {
        let (g, next) = predictor_update(model, &p)?;
        gains.push(g);
        covariances.push(p);
        p = next;
    }
    covariances.push(p);
    let steady = kalman_steady(model)?;
    Ok(KalmanSchedule { gains, covariances, steady })
}

/// The worked example model: `A = [[0.1, 1], [0, 1.2]]`, `B = 0.01·I₂`,
/// `C = [1, −1]`, `D = 0.04`, with the scalar measurement noise placed on a
/// third channel so that `B Dᵀ = 0` and `m = n + p = 3`.
pub fn two_state_example() -> StateSpaceModel {
    use nalgebra::dmatrix;
    StateSpaceModel::new(
        dmatrix![0.1, 1.0; 0.0, 1.2],
        dmatrix![0.01, 0.0, 0.0; 0.0, 0.01, 0.0],
        dmatrix![1.0, -1.0],
        dmatrix![0.0, 0.0, 0.04],
        SymMatrix::identity(2),
    )
    .expect("example model is well formed")
}
