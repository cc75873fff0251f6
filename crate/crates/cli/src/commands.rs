use robustkf::least_favorable::{self, ConvergenceCertificate, LeastFavorableModel, SteadyBackward, BACKWARD_TOL};
use robustkf::model::{self, KlScale, STATIONARITY_TOL};
use robustkf::performance::{self, MonteCarloEstimate};
use robustkf::robust_filter::{self, RobustTrajectory, SteadyState};
use robustkf::Tolerance;
use serde_json::{json, Value};

use crate::output::{matrix, number, real, reals, vec_cells, vec_header, Sink, Table};
use crate::scenario::{Scenario, ToleranceSpec};
use crate::CliError;

/// Bracket and bisection count for `c = "auto"`.
const C_MAX_BRACKET: (f64, f64) = (1e-6, 10.0);
const C_MAX_PROBES: usize = 30;

fn lib<T>(operation: &str, r: robustkf::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| {
        let message = format!("{operation}: {e}");
        if e.is_input_error() {
            CliError::input(message)
        } else {
            CliError::numeric(message)
        }
    })
}

fn scale_name(scale: KlScale) -> &'static str {
    match scale {
        KlScale::Standard => "standard",
        KlScale::Doubled => "doubled",
    }
}

pub struct Context<'a> {
    pub scenario: &'a Scenario,
    pub sink: Sink<'a>,
}

impl Context<'_> {
    /// Rank tests and the decorrelation the filter assumes.
    pub fn check_model(&self) -> Result<(), CliError> {
        let m = &self.scenario.model;
        lib("validate", model::validate(m))?;
        let cross = (m.b() * m.d().transpose()).norm();
        if cross > 1e-12 * (1.0 + m.b().norm() * m.d().norm()) {
            return Err(CliError::input(format!(
                "validate: process and measurement noise are correlated (‖B Dᵀ‖ = {cross:e}); normalize the model first"
            )));
        }
        Ok(())
    }

    fn tolerance(&self) -> Result<Tolerance, CliError> {
        let sc = self.scenario;
        match sc.tolerance {
            ToleranceSpec::Fixed(c) => lib("tolerance", Tolerance::with_scale(c, sc.scale)),
            ToleranceSpec::Auto => {
                let est = lib(
                    "estimate_c_max",
                    robust_filter::estimate_c_max(&sc.model, C_MAX_BRACKET, C_MAX_PROBES, sc.scale),
                )?;
                if est.ceiling_reached {
                    eprintln!(
                        "warning: recursion still converges at the bracket top c = {}; using it as c_max",
                        est.c_max
                    );
                }
                self.sink.json(
                    "c_max.json",
                    json!({
                        "c_max": real(est.c_max),
                        "kl_scale": scale_name(est.scale),
                        "empirical": est.empirical,
                        "ceiling_reached": est.ceiling_reached,
                        "first_failure": est.first_failure.map(real),
                        "failure_mode": est.failure_mode,
                        "bracket": reals(&[C_MAX_BRACKET.0, C_MAX_BRACKET.1]),
                        "probes": est.probes,
                    }),
                )?;
                let tol = lib("tolerance", Tolerance::with_scale(est.c_max, sc.scale))?;
                lib("tolerance", tol.with_ceiling(est.c_max))
            }
        }
    }
}

pub struct Analysis {
    pub tolerance: Tolerance,
    pub forward: RobustTrajectory,
    pub steady: SteadyState,
}

fn steady(ctx: &Context, tolerance: &Tolerance) -> Result<SteadyState, CliError> {
    lib("steady_state", robust_filter::steady_state(&ctx.scenario.model, tolerance, STATIONARITY_TOL))
}

pub fn analyze(ctx: &Context) -> Result<Analysis, CliError> {
    let sc = ctx.scenario;
    let m = &sc.model;
    let tolerance = ctx.tolerance()?;
    let forward = lib("run_forward", robust_filter::run_forward(m, m.p0(), &tolerance, sc.horizon))?;
    let steady = steady(ctx, &tolerance)?;

    let (n, p) = (m.n(), m.p());
    let mut header = vec!["t".to_string()];
    header.extend(vec_header("P", n, n));
    header.push("theta".into());
    header.extend(vec_header("V", n, n));
    header.extend(vec_header("G", n, p));
    let mut table = Table::new(header);
    for t in 0..=forward.horizon() {
        let mut row = vec![t.to_string()];
        row.extend(vec_cells(forward.p(t)));
        match forward.steps.get(t) {
            Some(step) => row.push(number(step.theta)),
            None => row.push(String::new()),
        }
        row.extend(vec_cells(forward.v(t)));
        match forward.steps.get(t) {
            Some(step) => row.extend(vec_cells(&step.gain)),
            None => row.extend(std::iter::repeat_n(String::new(), n * p)),
        }
        table.push(row);
    }
    ctx.sink.csv("forward_trajectory.csv", &table)?;

    ctx.sink.json(
        "steady_state.json",
        json!({
            "c": real(tolerance.c()),
            "kl_scale": scale_name(tolerance.scale()),
            "gamma_target": real(tolerance.gamma_target()),
            "P": matrix(&steady.p),
            "V": matrix(&steady.v),
            "theta": real(steady.theta),
            "G": matrix(&steady.gain),
            "A_bar": matrix(&steady.a_bar),
            "B_bar": matrix(&steady.b_bar),
            "spectral_radius_A_bar": real(steady.spectral_radius),
            "riccati_residual": real(steady.riccati_residual),
            "iterations": steady.iterations,
            "forward_converged_at": forward.converged_at,
        }),
    )?;
    Ok(Analysis { tolerance, forward, steady })
}

pub struct Synthesis {
    pub certificate: ConvergenceCertificate,
    pub backward: SteadyBackward,
    pub lf: LeastFavorableModel,
}

pub fn synthesize(ctx: &Context, analysis: &Analysis) -> Result<Synthesis, CliError> {
    let sc = ctx.scenario;
    let m = &sc.model;
    let n = m.n();
    let ss = &analysis.steady;

    let trajectory = lib("backward_recursion", least_favorable::backward_recursion(m, &analysis.forward))?;
    let mut header = vec!["t".to_string()];
    header.extend(vec_header("Omega_inv", n, n));
    let mut table = Table::new(header);
    for it in &trajectory {
        let mut row = vec![it.t.to_string()];
        row.extend(vec_cells(&it.omega_inv));
        table.push(row);
    }
    ctx.sink.csv("backward_trajectory.csv", &table)?;

    let certificate = lib("certify", least_favorable::certify(ss, sc.rho_grid))?;
    ctx.sink.json(
        "certificate.json",
        json!({
            "rho": real(certificate.rho),
            "margin": real(certificate.margin),
            "holds": certificate.holds,
            "Sigma_rho": matrix(&certificate.sigma_rho),
            "stein_residual": real(certificate.stein_residual),
            "theta": real(ss.theta),
            "rho_grid": sc.rho_grid,
        }),
    )?;
    if !certificate.holds {
        eprintln!(
            "warning: convergence certificate fails (best margin {:e}); backward limit is uncertified",
            certificate.margin
        );
    }

    let backward = lib(
        "steady_backward",
        least_favorable::steady_backward(ss, BACKWARD_TOL, certificate.holds.then_some(&certificate)),
    )?;
    let lf = lib("assemble", least_favorable::assemble(m, ss, &backward.x))?;
    ctx.sink.json(
        "lf_model.json",
        json!({
            "A_tilde": matrix(&lf.a_tilde),
            "B_tilde": matrix(&lf.b_tilde),
            "C_tilde": matrix(&lf.c_tilde),
            "D_tilde": matrix(&lf.d_tilde),
            "H": matrix(&lf.h),
            "K_tilde": matrix(&lf.k_tilde),
            "L": matrix(&lf.l),
            "Omega_inv": matrix(&lf.omega_inv),
            "X": matrix(&backward.x),
            "stationary": lf.stationary,
            "certified": backward.certified,
            "iterations": backward.iterations,
            "residual": real(backward.residual),
            "monotone_violations": backward.monotone_violations,
            "containment_violations": backward.containment_violations,
        }),
    )?;

    let stabilizing = lib("stabilizing_check", least_favorable::stabilizing_check(&backward.x, &ss.a_bar, &ss.b_bar))?;
    let eigenvalues: Vec<Value> =
        stabilizing.eigenvalues.iter().map(|z| json!({"re": real(z.re), "im": real(z.im)})).collect();
    ctx.sink.json(
        "stabilizing.json",
        json!({
            "eigenvalues": eigenvalues,
            "spectral_radius": real(stabilizing.spectral_radius),
            "stable": stabilizing.stable,
            "J": matrix(&stabilizing.j),
            "M": matrix(&stabilizing.m),
        }),
    )?;
    Ok(Synthesis { certificate, backward, lf })
}

fn mc_cells(est: Option<&MonteCarloEstimate>, n: usize) -> Vec<String> {
    match est {
        Some(e) => (0..n)
            .flat_map(|i| {
                // delta method: d(10 log₁₀ v) = 10/ln 10 · dv/v
                let se_db = 10.0 / std::f64::consts::LN_10 * e.variance_se[i] / e.variance[i];
                [number(performance::to_db(e.variance[i])), number(se_db)]
            })
            .collect(),
        None => vec![String::new(); 2 * n],
    }
}

pub fn compare(ctx: &Context, analysis: Analysis, synthesis: Synthesis) -> Result<(), CliError> {
    let sc = ctx.scenario;
    let m = &sc.model;
    let n = m.n();
    let report = lib(
        "compare",
        performance::compare_from_parts(
            m,
            analysis.steady,
            synthesis.certificate,
            synthesis.backward,
            synthesis.lf,
            sc.horizon,
        ),
    )?;

    let mc = match sc.mc {
        Some(cfg) => {
            let run = |es| {
                lib("monte_carlo_check", performance::monte_carlo_path(es, cfg.trajectories, cfg.horizon, cfg.seed))
            };
            Some((run(&report.kalman_system)?, run(&report.robust_system)?))
        }
        None => None,
    };

    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("var_kalman_{i}_db")));
    header.extend((1..=n).map(|i| format!("var_robust_{i}_db")));
    if mc.is_some() {
        for filter in ["kalman", "robust"] {
            for i in 1..=n {
                header.push(format!("mc_var_{filter}_{i}_db"));
                header.push(format!("mc_se_{filter}_{i}_db"));
            }
        }
    }
    let mut table = Table::new(header);
    for t in 0..=sc.horizon {
        let mut row = vec![t.to_string()];
        row.extend(report.kalman.variances_at(t).into_iter().map(|v| number(performance::to_db(v))));
        row.extend(report.robust.variances_at(t).into_iter().map(|v| number(performance::to_db(v))));
        if let Some((k, r)) = &mc {
            row.extend(mc_cells(k.get(t), n));
            row.extend(mc_cells(r.get(t), n));
        }
        table.push(row);
    }
    ctx.sink.csv("compare.csv", &table)?;

    let mc_summary = mc.as_ref().map(|(k, r)| {
        let summary = |e: &MonteCarloEstimate| {
            json!({
                "T": e.horizon,
                "mean": reals(&e.mean),
                "mean_se": reals(&e.mean_se),
                "variance": reals(&e.variance),
                "variance_se": reals(&e.variance_se),
            })
        };
        json!({
            "N": k[0].trajectories,
            "kalman": summary(k.last().expect("non-empty")),
            "robust": summary(r.last().expect("non-empty")),
        })
    });
    ctx.sink.json(
        "gap.json",
        json!({
            "c": real(analysis.tolerance.c()),
            "kl_scale": scale_name(analysis.tolerance.scale()),
            "theta": real(report.steady.theta),
            "certified": report.backward.certified,
            "T": sc.horizon,
            "gap_db": reals(&report.gap_db),
            "robust_lower": report.gap_db.iter().all(|&g| g >= 0.0),
            "kalman_db": reals(&report.kalman.variances_db),
            "robust_db": reals(&report.robust.variances_db),
            "kalman_variance": reals(&report.kalman.variances),
            "robust_variance": reals(&report.robust.variances),
            "kalman_gain": matrix(&report.kalman_gain),
            "robust_gain": matrix(&report.steady.gain),
            "monte_carlo": mc_summary,
        }),
    )?;
    Ok(())
}

pub fn certificate_sweep(ctx: &Context) -> Result<(), CliError> {
    let tolerance = ctx.tolerance()?;
    let ss = steady(ctx, &tolerance)?;
    let sweep = lib("certificate_sweep", least_favorable::certificate_sweep(&ss, ctx.scenario.rho_grid))?;
    let mut table = Table::new(vec!["rho".into(), "min_eig".into()]);
    for (rho, margin) in sweep {
        table.push(vec![number(rho), number(margin)]);
    }
    ctx.sink.csv("certificate_sweep.csv", &table)
}
