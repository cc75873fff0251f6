//! The tolerance function
//!
//! ```text
//! γ(P, θ) = ½ [ log det(I − θP) + tr((I − θP)⁻¹) − n ]
//! ```
//!
//! and its inverse in `θ`. For fixed `P ≻ 0`, `γ(P, ·)` increases strictly
//! from 0 at `θ = 0` to `+∞` as `θ ↑ 1/σ(P)`, so `c = γ(P, θ)` has exactly one
//! root for every `c > 0`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::{self, SymMatrix};

/// Bisection step cap for [`solve_theta`].
pub const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaSolution {
    pub theta: f64,
    pub achieved_c: f64,
    pub iterations: usize,
    pub bracket: (f64, f64),
}

/// Largest admissible `θ` for `P`, namely `1/σ(P)` (infinite for `P = 0`).
pub fn theta_ceiling(p: &SymMatrix) -> f64 {
    let sigma = numerics::max_eig_sym(p);
    if sigma > 0.0 {
        1.0 / sigma
    } else {
        f64::INFINITY
    }
}

/// Evaluates `γ(P, θ)` with the log-determinant and trace taken from a
/// Cholesky factorization of `I − θP`.
pub fn gamma(p: &SymMatrix, theta: f64) -> Result<f64> {
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(Error::domain("gamma", format!("θ must be finite and nonnegative, got {theta}")));
    }
    let n = p.dim();
    let m = DMatrix::identity(n, n) - p.as_matrix() * theta;
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::domain("gamma", format!("θ = {theta} is not below 1/σ(P) = {}", theta_ceiling(p))))?;
    let l = chol.l_dirty();
    let log_det: f64 = (0..n).map(|i| 2.0 * l[(i, i)].ln()).sum();
    let trace_inv = chol.inverse().trace();
    if !log_det.is_finite() || !trace_inv.is_finite() {
        return Err(Error::domain("gamma", format!("θ = {theta} is at the boundary 1/σ(P)")));
    }
    Ok(0.5 * (log_det + trace_inv - n as f64))
}

/// Solves `γ(P, θ) = c` for `θ ∈ [0, 1/σ(P))` by bracketing and bisection.
///
/// The upper bracket starts halfway into the admissible range and moves
/// toward `(1 − 1e-12)/σ(P)`, halving the remaining gap, until it covers the
/// root. Accepts the first iterate with `|γ − c| ≤ 1e-10·(1 + c)`.
pub fn solve_theta(p: &SymMatrix, c: f64) -> Result<ThetaSolution> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::domain("solve_theta", format!("c must be positive, got {c}")));
    }
    let sigma = numerics::max_eig_sym(p);
    if !(sigma > 0.0) {
        return Err(Error::domain("solve_theta", "P has no positive eigenvalue, γ(P, ·) ≡ 0"));
    }
    let upper = (1.0 - 1e-12) / sigma;
    let tol = 1e-10 * (1.0 + c);

    // Geometric expansion: hi walks toward `upper` by halving the gap.
    let mut lo = 0.0;
    let mut hi = 0.5 * upper;
    let mut iterations = 0;
    loop {
        let g = gamma(p, hi)?;
        iterations += 1;
        if (g - c).abs() <= tol {
            return Ok(ThetaSolution { theta: hi, achieved_c: g, iterations, bracket: (lo, hi) });
        }
        if g > c {
            break;
        }
        lo = hi;
        if hi >= upper {
            return Err(Error::domain(
                "solve_theta",
                format!("c = {c} is not reachable below (1 − 1e-12)/σ(P) (γ = {g})"),
            ));
        }
        hi = (upper - 0.5 * (upper - hi)).min(upper);
        if upper - hi < 1e-15 * upper {
            hi = upper;
        }
    }

    let bracket = (lo, hi);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let g = gamma(p, mid)?;
        iterations += 1;
        if (g - c).abs() <= tol {
            return Ok(ThetaSolution { theta: mid, achieved_c: g, iterations, bracket });
        }
        if g < c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence { context: "solve_theta".into(), iterations, last_change: hi - lo })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn zero_theta_gives_zero() {
        let p = SymMatrix::new(dmatrix![2.0, 0.3; 0.3, 0.5]).unwrap();
        assert!(gamma(&p, 0.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn scalar_closed_form() {
        let g = gamma(&SymMatrix::identity(1), 0.5).unwrap();
        let expected = 0.5 * (0.5_f64.ln() + 2.0 - 1.0);
        assert!((g - expected).abs() < 1e-15);
        assert!((g - 0.153426).abs() < 1e-6);
    }

    #[test]
    fn diagonal_closed_form() {
        let p = SymMatrix::from_diagonal(&[1.0, 2.0]);
        let expected = 0.5 * (0.75_f64.ln() + 0.5_f64.ln() + 1.0 / 0.75 + 1.0 / 0.5 - 2.0);
        assert!((gamma(&p, 0.25).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        let p = SymMatrix::from_diagonal(&[1.0, 2.0]);
        assert!(matches!(gamma(&p, 0.5), Err(Error::OutOfDomain { .. })));
        assert!(matches!(gamma(&p, 0.6), Err(Error::OutOfDomain { .. })));
        assert!(matches!(gamma(&p, -0.1), Err(Error::OutOfDomain { .. })));
        assert!(matches!(solve_theta(&p, 0.0), Err(Error::OutOfDomain { .. })));
        assert!(matches!(solve_theta(&SymMatrix::zeros(2), 0.1), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn tiny_tolerance_gives_tiny_theta() {
        let p = SymMatrix::new(dmatrix![1.0, 0.2; 0.2, 0.7]).unwrap();
        // γ ≈ θ² tr(P²) / 4 near zero, so θ scales like √c; with the
        // absolute acceptance band 1e-10 any θ with γ ≤ 1e-10 + c qualifies.
        let sol = solve_theta(&p, 1e-14).unwrap();
        let tr_p2 = (p.as_matrix() * p.as_matrix()).trace();
        let bound = (4.0 * (1e-14 + 1e-10) / tr_p2).sqrt() * 1.01;
        assert!(sol.theta <= bound, "θ = {}", sol.theta);
        assert!((sol.achieved_c - 1e-14).abs() <= 1e-10);
    }

    #[test]
    fn roundtrip_various_targets() {
        let p = SymMatrix::new(dmatrix![1.0, 0.2; 0.2, 0.7]).unwrap();
        for c in [0.01, 0.1, 1.0, 10.0, 1000.0] {
            let sol = solve_theta(&p, c).unwrap();
            assert!(sol.theta < theta_ceiling(&p));
            assert!((gamma(&p, sol.theta).unwrap() - c).abs() <= 1e-10 * (1.0 + c), "c = {c}");
            assert!(sol.iterations <= MAX_BISECTIONS + 64);
        }
    }

    #[test]
    fn psd_singular_p_is_fine() {
        let p = SymMatrix::from_diagonal(&[1.0, 0.0]);
        let sol = solve_theta(&p, 0.2).unwrap();
        // scalar closed form in the nonzero direction
        let x = 1.0 - sol.theta;
        assert!((0.5 * (x.ln() + 1.0 / x - 1.0) - 0.2).abs() <= 1e-10 * 1.2);
    }

    #[test]
    fn diverges_at_boundary() {
        let p = SymMatrix::from_diagonal(&[1.0, 2.0]);
        let s = 1.0 / theta_ceiling(&p);
        let vals: Vec<f64> = [1e-2, 1e-4, 1e-6].iter().map(|e| gamma(&p, (1.0 - e) / s).unwrap()).collect();
        assert!(vals[0] < vals[1] && vals[1] < vals[2]);
        assert!(vals[2] > 1e5);
    }
}
