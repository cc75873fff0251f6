use nalgebra::{dmatrix, DMatrix};
use robustkf::least_favorable::{
    assemble, assemble_time_varying, backward_recursion, mid_interval, scalar_oracle, simulate_lf, steady_backward,
    BACKWARD_TOL,
};
use robustkf::model::{kalman_steady, normalize, two_state_example, STATIONARITY_TOL};
use robustkf::numerics::{self, SymMatrix};
use robustkf::performance::{error_system, evaluate, lyapunov_recursion};
use robustkf::robust_filter::{run_forward, steady_state, SteadyState};
use robustkf::{KlScale, StateSpaceModel, Tolerance};

fn paper_tol() -> Tolerance {
    Tolerance::with_scale(0.1879, KlScale::Doubled).unwrap()
}

fn stable_model() -> StateSpaceModel {
    StateSpaceModel::new(
        dmatrix![0.6, 0.3; -0.2, 0.5],
        dmatrix![0.4, 0.1, 0.0; 0.0, 0.3, 0.0],
        dmatrix![1.0, 0.5],
        dmatrix![0.0, 0.0, 0.5],
        SymMatrix::new(dmatrix![0.8, 0.1; 0.1, 0.6]).unwrap(),
    )
    .unwrap()
}

#[test]
fn time_varying_model_settles_to_stationary() {
    let m = two_state_example();
    let tol = paper_tol();
    let horizon = 600;
    let fwd = run_forward(&m, m.p0(), &tol, horizon).unwrap();
    let bwd = backward_recursion(&m, &fwd).unwrap();
    let tv = assemble_time_varying(&m, &fwd, &bwd).unwrap();
    assert_eq!(tv.len(), horizon);

    let ss = steady_state(&m, &tol, STATIONARITY_TOL).unwrap();
    let sb = steady_backward(&ss, BACKWARD_TOL, None).unwrap();
    let lf = assemble(&m, &ss, &sb.x).unwrap();
    for t in mid_interval(horizon) {
        let x = &tv[t];
        assert!((&x.a_tilde - &lf.a_tilde).norm() < 1e-7 * lf.a_tilde.norm(), "t = {t}");
        assert!((&x.b_tilde - &lf.b_tilde).norm() < 1e-7 * lf.b_tilde.norm(), "t = {t}");
        assert!((&x.c_tilde - &lf.c_tilde).norm() < 1e-7 * lf.c_tilde.norm(), "t = {t}");
        assert!((&x.h - &lf.h).norm() < 1e-7 * lf.h.norm(), "t = {t}");
        assert!(!x.stationary);
    }
}

#[test]
fn simulated_output_covariance_matches_recursion() {
    let m = stable_model();
    let tol = Tolerance::new(0.05).unwrap();
    let ss = steady_state(&m, &tol, STATIONARITY_TOL).unwrap();
    let sb = steady_backward(&ss, BACKWARD_TOL, None).unwrap();
    let lf = assemble(&m, &ss, &sb.x).unwrap();
    assert!(numerics::spectral_radius(&lf.a_tilde).unwrap() < 1.0);

    let horizon = 60;
    let runs = 10_000;
    let samples: Vec<f64> =
        (0..runs).map(|i| simulate_lf(&lf, m.p0(), horizon, i).unwrap().y[horizon - 1][0]).collect();

    // Cov(ξ_0) = [P0 P0; P0 P0], then Σ ← ÃΣÃᵀ + B̃B̃ᵀ.
    let p0 = m.p0().as_matrix();
    let mut sigma = DMatrix::zeros(4, 4);
    for (i, j) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
        sigma.view_mut((i, j), (2, 2)).copy_from(p0);
    }
    for _ in 0..horizon - 1 {
        sigma = &lf.a_tilde * &sigma * lf.a_tilde.transpose() + &lf.b_tilde * lf.b_tilde.transpose();
    }
    let expected = (&lf.c_tilde * &sigma * lf.c_tilde.transpose() + &lf.d_tilde * lf.d_tilde.transpose())[(0, 0)];

    let n = runs as f64;
    let second: f64 = samples.iter().map(|v| v * v).sum::<f64>() / n;
    let fourth: f64 = samples.iter().map(|v| v.powi(4)).sum::<f64>() / n;
    let se = ((fourth - second * second) / n).sqrt();
    assert!((second - expected).abs() < 3.0 * se, "{second} vs {expected} ± {se}");
}

#[test]
fn scalar_iteration_matches_oracle() {
    let (abar, bbar, theta) = (0.1, 1.0, 0.1);
    let ss = SteadyState {
        p: SymMatrix::identity(1),
        v: SymMatrix::identity(1),
        theta,
        gain: DMatrix::zeros(1, 1),
        a_bar: dmatrix![abar],
        b_bar: dmatrix![bbar],
        iterations: 0,
        spectral_radius: abar,
        riccati_residual: 0.0,
    };
    let sb = steady_backward(&ss, 1e-15, None).unwrap();
    let oracle = scalar_oracle(abar, bbar, theta).unwrap();
    assert!((sb.x[(0, 0)] - oracle.iteration_limit).abs() < 1e-10);
    assert!((sb.x[(0, 0)] - oracle.x2).abs() < 1e-10);
    assert_eq!(sb.monotone_violations, 0);
}

#[test]
fn lyapunov_recursion_reaches_steady_variance() {
    let m = two_state_example();
    let tol = paper_tol();
    let ss = steady_state(&m, &tol, STATIONARITY_TOL).unwrap();
    let sb = steady_backward(&ss, BACKWARD_TOL, None).unwrap();
    let lf = assemble(&m, &ss, &sb.x).unwrap();
    for gain in [ss.gain.clone(), kalman_steady(&m).unwrap().gain] {
        let es = error_system(&lf, &gain, m.p0()).unwrap();
        let radius = numerics::spectral_radius(&es.f).unwrap();
        let horizon = (10.0 / (1.0 - radius)).ceil() as usize * 4;
        let rep = evaluate(&es, horizon).unwrap();
        let last = rep.trajectory.last().unwrap();
        assert!((last.as_matrix() - rep.steady.as_matrix()).norm() < 1e-8 * (1.0 + rep.steady.norm()));
        assert!(rep.residual <= 1e-10);
        let traces: Vec<f64> = lyapunov_recursion(&es, horizon).unwrap().iter().map(|p| p.trace()).collect();
        assert!(traces.iter().all(|t| t.is_finite()));
        assert!((traces[horizon] / rep.steady.trace() - 1.0).abs() < 0.01);
    }
}

#[test]
fn normalized_model_runs_through_pipeline() {
    // correlated noise, then decorrelate and compress
    let m = StateSpaceModel::new(
        dmatrix![0.7, 0.2; 0.0, 0.4],
        dmatrix![0.3, 0.1, 0.0; 0.2, 0.0, 0.1],
        dmatrix![1.0, 1.0],
        dmatrix![0.2, 0.5, 0.3],
        SymMatrix::identity(2),
    )
    .unwrap();
    assert!(!m.is_normalized());
    let norm = normalize(&m).unwrap();
    assert!(norm.model.is_normalized());
    let ss = steady_state(&norm.model, &Tolerance::new(0.05).unwrap(), STATIONARITY_TOL).unwrap();
    assert!(ss.spectral_radius < 1.0);
    let sb = steady_backward(&ss, BACKWARD_TOL, None).unwrap();
    assert!(sb.residual <= 1e-10);
    assemble(&norm.model, &ss, &sb.x).unwrap();
}
