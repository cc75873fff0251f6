//! Small dense matrix utilities shared by the filter, the least favorable
//! model synthesis and the performance analysis.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`; symmetric objects are
//! carried as [`SymMatrix`], which is exactly symmetric by construction.

use std::ops::{Add, Deref, Mul, Sub};

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest dimension for which [`solve_stein`] uses the vectorized solve.
pub const STEIN_DIRECT_MAX_DIM: usize = 50;

/// Relative eigenvalue threshold below which [`guarded_inverse`] refuses.
pub const NEAR_SINGULAR_RTOL: f64 = 1e-12;

/// A real symmetric matrix.
///
/// The stored entries satisfy `m[(i, j)] == m[(j, i)]` bit-for-bit: every
/// constructor replaces its input by `(M + Mᵀ) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.nrows() != m.ncols() {
            return Err(Error::dims(
                "SymMatrix::new",
                "non-empty square matrix",
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SymMatrix::new".into()));
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes a square matrix without validation; callers guarantee
    /// squareness.
    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        let t = m.transpose();
        let mut s = (m + t) * 0.5;
        // (a + b) / 2 and (b + a) / 2 agree in IEEE arithmetic, but copy the
        // upper triangle anyway so the invariant never depends on that.
        let n = s.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                s[(i, j)] = s[(j, i)];
            }
        }
        SymMatrix(s)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        SymMatrix(DMatrix::identity(n, n) * s)
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_row_slice(d)))
    }

    /// Gram matrix `M Mᵀ`.
    pub fn gram(m: &DMatrix<f64>) -> Self {
        Self::symmetrized(m * m.transpose())
    }

    /// Congruence `T S Tᵀ`.
    pub fn congruence(&self, t: &DMatrix<f64>) -> Self {
        Self::symmetrized(t * &self.0 * t.transpose())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn is_exactly_symmetric(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| self.0[(i, j)].to_bits() == self.0[(j, i)].to_bits()))
    }

    pub fn add_identity(&self, s: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += s;
        }
        SymMatrix(m)
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl AsRef<DMatrix<f64>> for SymMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;

    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix::symmetrized(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;

    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix::symmetrized(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;

    fn mul(self, rhs: f64) -> SymMatrix {
        SymMatrix(&self.0 * rhs)
    }
}

fn require_square(m: &DMatrix<f64>, context: &str) -> Result<usize> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(Error::dims(context, "non-empty square matrix", format!("{}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(context.to_string()));
    }
    Ok(m.nrows())
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let n = require_square(m, "eigenvalues")?;
    if n == 1 {
        return Ok(vec![Complex::new(m[(0, 0)], 0.0)]);
    }
    Ok(m.complex_eigenvalues().iter().copied().collect())
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?.into_iter().map(|z| z.norm()).fold(0.0, f64::max))
}

pub fn eigen_sym(m: &SymMatrix) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(m.as_matrix().clone())
}

pub fn min_eig_sym(m: &SymMatrix) -> f64 {
    eigen_sym(m).eigenvalues.min()
}

pub fn max_eig_sym(m: &SymMatrix) -> f64 {
    eigen_sym(m).eigenvalues.max()
}

/// Solves the Stein (discrete Lyapunov) equation `Σ = Fᵀ Σ F + Q`.
///
/// Up to [`STEIN_DIRECT_MAX_DIM`] the Kronecker form
/// `(I − Fᵀ ⊗ Fᵀ) vec Σ = vec Q` is solved directly; larger problems use
/// Smith's doubling iteration.
pub fn solve_stein(f: &DMatrix<f64>, q: &SymMatrix) -> Result<SymMatrix> {
    let n = require_square(f, "solve_stein")?;
    if q.dim() != n {
        return Err(Error::dims("solve_stein", format!("Q {n}x{n}"), format!("Q {0}x{0}", q.dim())));
    }
    let radius = spectral_radius(f)?;
    if radius >= 1.0 - 1e-12 {
        return Err(Error::NotStable { radius });
    }
    let sigma = if n <= STEIN_DIRECT_MAX_DIM {
        let ft = f.transpose();
        let k = DMatrix::identity(n * n, n * n) - ft.kronecker(&ft);
        let rhs = DVector::from_column_slice(q.as_slice());
        let sol = k
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NearSingular { context: "solve_stein (Kronecker system)".into(), eigenvalue: 0.0 })?;
        DMatrix::from_column_slice(n, n, sol.as_slice())
    } else {
        smith_doubling(f, q)?
    };
    Ok(SymMatrix::symmetrized(sigma))
}

fn smith_doubling(f: &DMatrix<f64>, q: &SymMatrix) -> Result<DMatrix<f64>> {
    const MAX_DOUBLINGS: usize = 64;
    let mut sigma = q.as_matrix().clone();
    let mut a = f.clone();
    let mut change = f64::INFINITY;
    for _ in 0..MAX_DOUBLINGS {
        let inc = a.transpose() * &sigma * &a;
        change = inc.norm() / (1.0 + sigma.norm());
        sigma += inc;
        a = &a * &a;
        if change < 1e-16 {
            return Ok(sigma);
        }
    }
    Err(Error::NoConvergence {
        context: "solve_stein (doubling)".into(),
        iterations: MAX_DOUBLINGS,
        last_change: change,
    })
}

/// Lower-triangular `L` with `L Lᵀ = K`.
pub fn symmetric_factor(k: &SymMatrix) -> Result<DMatrix<f64>> {
    let min_eig = min_eig_sym(k);
    if min_eig <= 1e-14 {
        return Err(Error::NotPositiveDefinite { min_eig });
    }
    k.as_matrix().clone().cholesky().map(|c| c.l()).ok_or(Error::NotPositiveDefinite { min_eig })
}

/// Symmetric square root factor `S` with `S Sᵀ = K` for `K ⪰ 0`
/// (eigenvalues below zero are clipped). Used where `K` may be singular.
pub fn psd_factor(k: &SymMatrix) -> DMatrix<f64> {
    let eig = eigen_sym(k);
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
}

/// Inverse of a symmetric, well-conditioned (possibly indefinite) matrix.
///
/// Refuses when the eigenvalue of smallest modulus is below
/// `1e-12 · ‖M‖₂`, reporting `context` so the caller can tell which
/// recursion broke down.
pub fn guarded_inverse(m: &SymMatrix, context: &str) -> Result<SymMatrix> {
    let eig = eigen_sym(m);
    let spectral_norm = eig.eigenvalues.iter().fold(0.0_f64, |a, l| a.max(l.abs()));
    let smallest = eig.eigenvalues.iter().copied().min_by(|a, b| a.abs().total_cmp(&b.abs())).expect("non-empty");
    if !(smallest.abs() > NEAR_SINGULAR_RTOL * spectral_norm) {
        return Err(Error::NearSingular { context: context.to_string(), eigenvalue: smallest });
    }
    let inv_diag = eig.eigenvalues.map(|l| 1.0 / l);
    let v = &eig.eigenvectors;
    Ok(SymMatrix::symmetrized(v * DMatrix::from_diagonal(&inv_diag) * v.transpose()))
}

/// Solves `S X = R` for symmetric positive definite `S` (Cholesky), used
/// for gains of the form `R S⁻¹` without forming the inverse.
pub(crate) fn spd_solve(s: &SymMatrix, rhs: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let chol = s
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NearSingular { context: context.to_string(), eigenvalue: min_eig_sym(s) })?;
    Ok(chol.solve(rhs))
}

/// Rank by singular values with threshold `rtol · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * smax).count()
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}
