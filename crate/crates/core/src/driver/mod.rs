//! Twin experiments, the truncated Gauss–Newton loop, verification and
//! report output.

mod config;
mod report;
mod tgn;
mod twin;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::krylov::SolverConfig;
use crate::models::{adjoint_test, taylor_test_model, taylor_test_observation, DEFAULT_EPSILONS};
use crate::operators::{materialize_dense, Vector, DEFAULT_ORACLE_CAP};
use crate::problem::{Formulation, SystemForm};

pub use config::{
    CovarianceSection, ExperimentConfig, ExperimentSection, ModelKind, ModelSection, ObservationKind,
    ObservationSection, PreconditionerSection, SolverSection,
};
pub use report::{emit_report, read_summary, ReportPaths, RunSummary};
pub use tgn::{tgn_run, InnerRecord, OuterRecord, Route, SecondLevel, TgnConfig, TgnResult, MAX_STEP_HALVINGS};
pub use twin::{run_twin, TwinExperiment};

/// Twin experiment followed by the configured TGN run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let start = Instant::now();
    let twin = run_twin(cfg)?;
    let x0 = twin.initial_guess()?;
    let result = tgn_run(&twin.setup, &x0, &cfg.tgn_config())?;
    let background_error = twin.background_error();
    let analysis_error = twin.analysis_error(&result.analysis);
    Ok(RunSummary {
        config: cfg.clone(),
        total_inner_iterations: result.total_inner_iterations(),
        final_cost: Some(result.final_cost),
        final_gradient_norm: Some(result.final_gradient_norm),
        background_error: Some(background_error),
        analysis_error: Some(analysis_error),
        improvement_factor: Some(background_error / analysis_error),
        halted: result.halted,
        outer: result.outer,
        seconds: start.elapsed().as_secs_f64(),
        analysis: result.analysis.iter().copied().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub model_adjoint_error: f64,
    pub observation_adjoint_error: f64,
    /// `None` when the map is linear (every remainder at rounding level).
    pub model_taylor_slope: Option<f64>,
    pub observation_taylor_slope: Option<f64>,
    pub taylor_passed: bool,
    /// Worst relative error of the gradient against central differences.
    pub gradient_error: f64,
    pub passed: bool,
}

/// Adjoint, Taylor and gradient checks at the first truth state of the twin
/// experiment described by `cfg`.
pub fn verify(cfg: &ExperimentConfig) -> Result<VerifyReport> {
    let twin = run_twin(cfg)?;
    let setup = &twin.setup;
    let x = &twin.truth[0];
    let n = x.len();
    let seed = cfg.experiment.seed;
    let model = setup.model();
    let obs = &setup.windows()[0].operator;
    let model_adjoint_error = adjoint_test(&model.linearize(x)?, 100, seed)?;
    let observation_adjoint_error = adjoint_test(&obs.linearize(x)?, 100, seed + 1)?;
    let dir = Vector::from_fn(n, |i, _| ((i as f64 + 1.0) * 0.7).sin());
    let tm = taylor_test_model(model.as_ref(), x, &dir, &DEFAULT_EPSILONS)?;
    let to = taylor_test_observation(obs.as_ref(), x, &dir, &DEFAULT_EPSILONS)?;

    let x0 = twin.initial_guess()?;
    let grad = setup.gradient(&x0)?;
    let eps = 1e-5;
    let mut gradient_error = 0.0f64;
    for k in 0..3 {
        let d = Vector::from_fn(x0.len(), |i, _| ((i * (k + 2)) as f64 * 0.37 + k as f64).cos());
        let fd = (setup.cost(&(&x0 + &d * eps))? - setup.cost(&(&x0 - &d * eps))?) / (2.0 * eps);
        let an = grad.dot(&d);
        gradient_error = gradient_error.max((fd - an).abs() / an.abs().max(f64::MIN_POSITIVE));
    }
    let taylor_passed = tm.passes() && to.passes();
    Ok(VerifyReport {
        passed: model_adjoint_error <= 1e-12
            && observation_adjoint_error <= 1e-12
            && taylor_passed
            && gradient_error <= 1e-6,
        model_adjoint_error,
        observation_adjoint_error,
        model_taylor_slope: tm.slope.filter(|_| !tm.exact),
        observation_taylor_slope: to.slope.filter(|_| !to.exact),
        taylor_passed,
        gradient_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub route: Route,
    pub iterations: usize,
    /// `max |s − s_dense| / max |s_dense|`.
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub control_dim: usize,
    pub dense_increment_norm: f64,
    pub routes: Vec<OracleRow>,
}

/// Compares every route, solved to convergence, with a dense solve of the
/// first Gauss–Newton system. Refuses problems above the dense oracle cap.
pub fn oracle(cfg: &ExperimentConfig) -> Result<OracleReport> {
    let twin = run_twin(cfg)?;
    let x0 = twin.initial_guess()?;
    let sub = twin.setup.linearize(&x0)?;
    let form = match sub.formulation() {
        Formulation::Strong => SystemForm::StrongPrimal,
        Formulation::Weak => SystemForm::WeakState,
    };
    let sys = sub.assemble_normal(form)?;
    let a = materialize_dense(&sys.operator, DEFAULT_ORACLE_CAP)?;
    let a = (&a + a.transpose()) * 0.5;
    let dense = a
        .cholesky()
        .ok_or_else(|| crate::Error::Breakdown("dense normal matrix is not SPD".into()))?
        .solve(&sys.rhs);
    let scale = dense.amax().max(f64::MIN_POSITIVE);
    // MINRES and GMRES on the augmented system lose orthogonality without
    // restarts, so the budget is a generous multiple of its order.
    let dim = 4 * (sub.obs_dim() + 2 * sub.control_dim());
    let mut routes = Vec::new();
    for route in [
        Route::PrimalPcg,
        Route::PrimalCgls,
        Route::DualRpcg,
        Route::DualGmres,
        Route::SaddleMinres,
        Route::SaddleGmres,
    ] {
        let tgn = TgnConfig {
            route,
            safeguard: false,
            second_level: SecondLevel::None,
            solver: SolverConfig {
                max_iterations: dim,
                tolerance: 1e-12,
                ..cfg.tgn_config().solver
            },
            ..cfg.tgn_config()
        };
        let out = tgn::inner_solve(&sub, &tgn, &tgn.solver, None)?;
        routes.push(OracleRow {
            route,
            iterations: out.report.iterations,
            relative_error: (&out.s - &dense).amax() / scale,
        });
    }
    Ok(OracleReport {
        control_dim: sub.control_dim(),
        dense_increment_norm: dense.norm(),
        routes,
    })
}
