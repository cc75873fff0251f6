//! One line per acceptance criterion; exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{dmatrix, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustkf::divergence::{gamma, solve_theta, theta_ceiling};
use robustkf::least_favorable::{
    assemble, assemble_time_varying, backward_recursion, certify, certify_at, mid_interval, scalar_oracle,
    stabilizing_check, steady_backward, BACKWARD_TOL, DEFAULT_RHO_GRID,
};
use robustkf::model::{kalman_gain_schedule, two_state_example, validate, STATIONARITY_TOL};
use robustkf::numerics::{min_eig_sym, spectral_radius};
use robustkf::performance::{self, error_system, lyapunov_recursion, monte_carlo_check};
use robustkf::robust_filter::{estimate_c_max, run_forward, steady_state};
use robustkf::{KlScale, StateSpaceModel, SymMatrix, Tolerance};

const PAPER_C: f64 = 0.1879;

fn paper_tol() -> Tolerance {
    Tolerance::with_scale(PAPER_C, KlScale::Doubled).unwrap()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn criterion(id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut out = f();
    let elapsed = start.elapsed();
    if let Some(limit) = limit {
        if elapsed > limit {
            out.pass = false;
            out.detail.push_str(&format!("; over the {:.0} s limit", limit.as_secs_f64()));
        }
    }
    println!(
        "{} [{id:>2}] {name} ({:.2} s): {}",
        if out.pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        out.detail
    );
    out.pass
}

fn close_rel(got: f64, want: f64, tol: f64) -> bool {
    (got / want - 1.0).abs() <= tol
}

fn c_max() -> Outcome {
    let m = two_state_example();
    match estimate_c_max(&m, (1e-6, 10.0), 40, KlScale::Doubled) {
        Ok(est) => outcome(
            (est.c_max - PAPER_C).abs() <= 1e-3,
            format!(
                "c_max = {:.6} (target 0.1879 ± 1e-3), ceiling_reached = {}, first failure {:?}",
                est.c_max, est.ceiling_reached, est.first_failure
            ),
        ),
        Err(e) => outcome(false, format!("estimate_c_max failed: {e}")),
    }
}

fn certificate() -> Outcome {
    let m = two_state_example();
    let ss = steady_state(&m, &paper_tol(), STATIONARITY_TOL).unwrap();
    let cert = certify(&ss, DEFAULT_RHO_GRID).unwrap();
    let pass = cert.holds && (cert.margin - 4.02e-5).abs() <= 1e-5 && (cert.rho - 1.382).abs() <= 0.01;
    outcome(pass, format!("margin {:.4e} at rho = {:.4} (target 4.02e-5 ± 1e-5 near 1.382)", cert.margin, cert.rho))
}

fn sigma_rho() -> Outcome {
    let m = two_state_example();
    let ss = steady_state(&m, &paper_tol(), STATIONARITY_TOL).unwrap();
    let cert = certify_at(&ss.a_bar, &ss.b_bar, ss.theta, 1.382).unwrap();
    let want = dmatrix![589.0, -503.0; -503.0, 431.0];
    let s = &cert.sigma_rho;
    let pass = s.iter().zip(want.iter()).all(|(g, w)| close_rel(*g, *w, 0.01)) && cert.stein_residual <= 1e-10;
    outcome(
        pass,
        format!(
            "Sigma_rho = [[{:.2}, {:.2}], [{:.2}, {:.2}]], Stein residual {:.1e}",
            s[(0, 0)],
            s[(0, 1)],
            s[(1, 0)],
            s[(1, 1)],
            cert.stein_residual
        ),
    )
}

fn omega_inv() -> Outcome {
    let m = two_state_example();
    let tol = paper_tol();
    let horizon = 1000;
    let fwd = run_forward(&m, m.p0(), &tol, horizon).unwrap();
    let bwd = backward_recursion(&m, &fwd).unwrap();
    let mid = bwd[horizon / 2].omega_inv.clone();
    let ss = steady_state(&m, &tol, STATIONARITY_TOL).unwrap();
    let cert = certify(&ss, DEFAULT_RHO_GRID).unwrap();
    let sb = steady_backward(&ss, BACKWARD_TOL, Some(&cert)).unwrap();
    let want = dmatrix![456.0, -390.0; -390.0, 334.0];
    let paper_ok = mid.iter().zip(want.iter()).all(|(g, w)| close_rel(*g, *w, 0.01));
    let paths = mid_interval(horizon)
        .map(|t| (bwd[t].omega_inv.as_matrix() - sb.omega_inv.as_matrix()).norm() / (1.0 + sb.omega_inv.norm()))
        .fold(0.0, f64::max);
    outcome(
        paper_ok && paths <= 1e-8,
        format!(
            "Omega_inv = [[{:.2}, {:.2}], [{:.2}, {:.2}]], max mid-interval gap to Theta limit {:.1e}",
            mid[(0, 0)],
            mid[(0, 1)],
            mid[(1, 0)],
            mid[(1, 1)],
            paths
        ),
    )
}

fn stabilizing() -> Outcome {
    let m = two_state_example();
    let ss = steady_state(&m, &paper_tol(), STATIONARITY_TOL).unwrap();
    let sb = steady_backward(&ss, BACKWARD_TOL, None).unwrap();
    let chk = stabilizing_check(&sb.x, &ss.a_bar, &ss.b_bar).unwrap();
    let mut eig: Vec<f64> = chk.eigenvalues.iter().map(|z| z.re).collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let imag = chk.eigenvalues.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let pass = chk.stable && imag == 0.0 && (eig[0] - 0.8373).abs() <= 1e-3 && (eig[1] - 0.0892).abs() <= 1e-3;
    outcome(pass, format!("eigenvalues {eig:.5?}, spectral radius {:.5}", chk.spectral_radius))
}

fn db_gap() -> Outcome {
    let m = two_state_example();
    let r = performance::compare(&m, &paper_tol(), performance::DEFAULT_HORIZON, DEFAULT_RHO_GRID).unwrap();
    let pass = r.gap_db.iter().all(|g| (g - 1.5).abs() <= 0.3 && *g > 0.0);
    outcome(pass, format!("gaps {:.3?} dB (target 1.5 ± 0.3, robust lower)", r.gap_db))
}

fn scalar() -> Outcome {
    let (a, b, theta) = (0.1f64, 1.0f64, 0.1f64);
    let r = scalar_oracle(a, b, theta).unwrap();
    let k = 1.0 - a * a + b * b * theta;
    let disc = (k * k - 4.0 * b * b * theta).sqrt();
    let closed = ((k + disc) / (2.0 * b * b), (k - disc) / (2.0 * b * b));
    let pass = (r.x1 - 0.99).abs() <= 5e-3
        && (r.x2 - 0.10).abs() <= 5e-3
        && (r.x1 - closed.0).abs() <= 1e-12
        && (r.x2 - closed.1).abs() <= 1e-12
        && (r.iteration_limit - r.x2).abs() <= 1e-10
        && (r.f2.abs() - 0.11).abs() <= 0.01;
    outcome(
        pass,
        format!(
            "x1 = {:.6}, x2 = {:.6}, iteration limit {:.6}, |f1| = {:.4}, |f2| = {:.5}",
            r.x1,
            r.x2,
            r.iteration_limit,
            r.f1.abs(),
            r.f2.abs()
        ),
    )
}

fn degenerate() -> Outcome {
    let m = two_state_example();
    let tol = Tolerance::new(1e-14).unwrap();
    let horizon = 200;
    let fwd = run_forward(&m, m.p0(), &tol, horizon).unwrap();
    let kal = kalman_gain_schedule(&m, horizon).unwrap();
    let filter_gap = (0..horizon)
        .map(|t| {
            (&fwd.steps[t].gain - &kal.gains[t]).norm()
                + (fwd.p(t + 1).as_matrix() - kal.covariances[t + 1].as_matrix()).norm()
        })
        .fold(0.0, f64::max);
    let bwd = backward_recursion(&m, &fwd).unwrap();
    let omega = bwd.iter().map(|it| it.omega_inv.norm()).fold(0.0, f64::max);
    let tv = assemble_time_varying(&m, &fwd, &bwd).unwrap();
    let ss = steady_state(&m, &tol, STATIONARITY_TOL).unwrap();
    let sb = steady_backward(&ss, BACKWARD_TOL, None).unwrap();
    let lf = assemble(&m, &ss, &sb.x).unwrap();
    let nominal_gap = tv
        .iter()
        .chain(std::iter::once(&lf))
        .map(|lf| {
            (lf.a_tilde.view((0, 0), (2, 2)) - m.a()).norm()
                + (lf.a_tilde.view((0, 2), (2, 2))).norm()
                + (lf.b_tilde.view((0, 0), (2, 3)) - m.b()).norm()
                + (lf.c_tilde.view((0, 0), (1, 2)) - m.c()).norm()
                + (lf.c_tilde.view((0, 2), (1, 2))).norm()
                + (&lf.d_tilde - m.d()).norm()
                + lf.h.norm()
                + (&lf.l - DMatrix::identity(3, 3)).norm()
        })
        .fold(0.0, f64::max);
    let pass = filter_gap <= 1e-10 && omega <= 1e-10 && nominal_gap <= 1e-10;
    outcome(
        pass,
        format!("filter vs Kalman {filter_gap:.1e}, max |Omega_inv| {omega:.1e}, LF vs nominal {nominal_gap:.1e}"),
    )
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0) * scale)
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    let l = random_matrix(rng, n, n, 1.0);
    SymMatrix::new(&l * l.transpose() + DMatrix::identity(n, n) * 0.05).unwrap()
}

fn random_model(rng: &mut ChaCha8Rng) -> Option<StateSpaceModel> {
    let a = random_matrix(rng, 2, 2, 1.0);
    let r = spectral_radius(&a).ok()?;
    let a = if r > 1e-9 { a * (rng.random_range(0.3..1.1) / r) } else { a };
    let mut b = DMatrix::zeros(2, 3);
    b.view_mut((0, 0), (2, 2)).copy_from(&random_matrix(rng, 2, 2, 0.5));
    let c = random_matrix(rng, 1, 2, 1.0);
    let d = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, rng.random_range(0.05..1.0)]);
    let m = StateSpaceModel::new(a, b, c, d, SymMatrix::identity(2)).ok()?;
    validate(&m).ok()?;
    Some(m)
}

fn psd_le(lo: &SymMatrix, hi: &SymMatrix) -> bool {
    min_eig_sym(&SymMatrix::new(hi.as_matrix() - lo.as_matrix()).unwrap()) >= -1e-10 * (1.0 + hi.norm())
}

fn properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut failures = Vec::new();
    let mut worst_residual: f64 = 0.0;

    // Θ-iterates on systems where the certificate holds.
    let (mut certified, mut attempts) = (0, 0);
    while certified < 100 && attempts < 5000 {
        attempts += 1;
        let Some(m) = random_model(&mut rng) else { continue };
        let c = 10f64.powf(rng.random_range(-3.0..-1.0));
        let Ok(ss) = steady_state(&m, &Tolerance::new(c).unwrap(), STATIONARITY_TOL) else { continue };
        let Ok(cert) = certify(&ss, 128) else { continue };
        if !cert.holds {
            continue;
        }
        certified += 1;
        let sb = steady_backward(&ss, BACKWARD_TOL, Some(&cert)).unwrap();
        if sb.monotone_violations > 0 || sb.containment_violations > 0 {
            failures.push(format!("iterates on system {certified}"));
        }
        let lf = assemble(&m, &ss, &sb.x).unwrap();
        let es = error_system(&lf, &ss.gain, m.p0()).unwrap();
        let pi_residual = performance::evaluate(&es, 1).unwrap().residual;
        worst_residual =
            worst_residual.max(ss.riccati_residual).max(sb.residual).max(cert.stein_residual).max(pi_residual);
    }
    if certified < 100 {
        failures.push(format!("only {certified} certified systems in {attempts} draws"));
    }

    // Θ order preservation.
    for i in 0..100 {
        let a = random_matrix(&mut rng, 2, 2, 1.0);
        let b = random_matrix(&mut rng, 2, 3, 0.4);
        let theta = rng.random_range(0.0..0.5);
        let x = random_spd(&mut rng, 2);
        let r = random_matrix(&mut rng, 2, 2, 0.3);
        let x2 = SymMatrix::new(x.as_matrix() + &r * r.transpose()).unwrap();
        let k = (0.9 / (x2.norm() * b.norm().powi(2))).min(1.0);
        let (x1, x2) = (SymMatrix::new(x.as_matrix() * k).unwrap(), SymMatrix::new(x2.as_matrix() * k).unwrap());
        let t1 = robustkf::least_favorable::theta_map(&x1, &a, &b, theta).unwrap();
        let t2 = robustkf::least_favorable::theta_map(&x2, &a, &b, theta).unwrap();
        if !psd_le(&t1, &t2) || !psd_le(&SymMatrix::scaled_identity(2, theta), &t1) {
            failures.push(format!("order pair {i}"));
        }
    }

    // γ monotonicity and solve_theta round trip.
    for i in 0..100 {
        let p = random_spd(&mut rng, 3);
        let r = random_matrix(&mut rng, 3, 3, 0.5);
        let bigger = SymMatrix::new(p.as_matrix() + &r * r.transpose()).unwrap();
        let ceiling = theta_ceiling(&bigger);
        let (s, u) = (rng.random_range(0.01..0.5), rng.random_range(0.5..0.99));
        let in_theta = gamma(&p, s * ceiling).unwrap() < gamma(&p, u * ceiling).unwrap();
        let in_p = gamma(&p, u * ceiling).unwrap() <= gamma(&bigger, u * ceiling).unwrap();
        let c = 10f64.powf(rng.random_range(-6.0..2.0));
        let sol = solve_theta(&p, c).unwrap();
        let round_trip = (gamma(&p, sol.theta).unwrap() - c).abs() <= 1e-10 * (1.0 + c);
        if !(in_theta && in_p && round_trip) {
            failures.push(format!("gamma instance {i}"));
        }
    }

    if worst_residual > 1e-10 {
        failures.push(format!("residual {worst_residual:.1e}"));
    }
    outcome(
        failures.is_empty(),
        format!(
            "{certified} certified systems, 100 order pairs, 100 gamma instances; worst residual {worst_residual:.1e}; failures {failures:?}"
        ),
    )
}

fn monte_carlo() -> Outcome {
    let m = two_state_example();
    let r = performance::compare(&m, &paper_tol(), 1, DEFAULT_RHO_GRID).unwrap();
    let (runs, horizon, seed) = (10_000, 500, 20260101);
    let mut worst_var: f64 = 0.0;
    let mut worst_mean: f64 = 0.0;
    for es in [&r.kalman_system, &r.robust_system] {
        let mc = monte_carlo_check(es, runs, horizon, seed).unwrap();
        let pi = &lyapunov_recursion(es, horizon).unwrap()[horizon];
        for i in 0..es.n() {
            worst_var = worst_var.max((mc.variance[i] - pi[(i, i)]).abs() / mc.variance_se[i]);
            worst_mean = worst_mean.max(mc.mean[i].abs() / mc.mean_se[i]);
        }
    }
    outcome(
        worst_var <= 3.0 && worst_mean <= 3.0,
        format!("worst variance deviation {worst_var:.2} SE, worst mean deviation {worst_mean:.2} SE (limit 3)"),
    )
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let results = [
        criterion(1, "c_MAX reproduction", Some(secs(30)), c_max),
        criterion(2, "certificate margin", Some(secs(5)), certificate),
        criterion(3, "Sigma_rho reproduction", None, sigma_rho),
        criterion(4, "Omega_inv reproduction", None, omega_inv),
        criterion(5, "stabilizing eigenvalues", None, stabilizing),
        criterion(6, "dB gap", Some(secs(10)), db_gap),
        criterion(7, "scalar oracle", None, scalar),
        criterion(8, "degenerate-case exactness", None, degenerate),
        criterion(9, "property suites", Some(secs(60)), properties),
        criterion(10, "Monte Carlo agreement", Some(secs(120)), monte_carlo),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
