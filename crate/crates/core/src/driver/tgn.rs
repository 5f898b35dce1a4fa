//! Truncated Gauss–Newton outer loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::krylov::{cgls, gmres, pcg, rpcg, SolveReport, SolverConfig, Termination};
use crate::operators::{LinearOperator, Operator, Vector};
use crate::precond::{
    build_qn_lmp, build_ritz_lmp, choose_theta, first_level, ftilde_preconditioner, ritz_lmp,
    FtildeChoice, ThetaMode,
};
use crate::problem::{AssimilationSetup, Formulation, InnerSubproblem, SystemForm};
use crate::saddle::{
    safeguarded_inner_solve, solve_saddle, BlockPreconditioner, BlockVariant, SaddleSolver, SchurApprox,
    SAFEGUARD_CAP,
};

/// Halvings of the step tried before an increment is rejected.
pub const MAX_STEP_HALVINGS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    PrimalPcg,
    PrimalCgls,
    DualRpcg,
    DualGmres,
    SaddleMinres,
    SaddleGmres,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecondLevel {
    None,
    /// General LMP with the previous Ritz vectors as `Z`.
    RitzLmp,
    /// General LMP with the previous search directions as `Z`.
    QnLmp,
    /// Spectral LMP from the previous Ritz pairs.
    SpectralLmp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TgnConfig {
    pub outer: usize,
    pub solver: SolverConfig,
    pub route: Route,
    pub second_level: SecondLevel,
    pub safeguard: bool,
    pub theta: ThetaMode,
    /// Solve the transformed system `U` of the control-variable transform
    /// (primal-pcg only).
    pub first_level: bool,
    pub ftilde: FtildeChoice,
    /// Block preconditioner for saddle routes; `P_D` for MINRES and `P_C`
    /// for GMRES when unset.
    pub block: Option<BlockVariant>,
}

impl Default for TgnConfig {
    fn default() -> Self {
        TgnConfig {
            outer: 5,
            solver: SolverConfig::default(),
            route: Route::PrimalPcg,
            second_level: SecondLevel::None,
            safeguard: true,
            theta: ThetaMode::Unit,
            first_level: true,
            ftilde: FtildeChoice::Identity,
            block: None,
        }
    }
}

impl TgnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer == 0 {
            return Err(Error::Config("at least one outer iteration is required".into()));
        }
        self.solver.validate()?;
        if self.second_level != SecondLevel::None
            && !(self.route == Route::PrimalPcg && self.first_level)
        {
            return Err(Error::Config(
                "second-level preconditioners need route primal-pcg with first_level = true".into(),
            ));
        }
        if self.route == Route::SaddleMinres && self.block.is_some_and(|b| b != BlockVariant::Pd) {
            return Err(Error::Config("saddle-minres only accepts block = \"pd\"".into()));
        }
        Ok(())
    }

    fn block_variant(&self) -> BlockVariant {
        self.block.unwrap_or(match self.route {
            Route::SaddleMinres => BlockVariant::Pd,
            _ => BlockVariant::Pc,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerRecord {
    /// Iterations of the last run.
    pub iterations: usize,
    /// Iterations over all runs, including safeguard reruns.
    pub total_iterations: usize,
    pub residual_norms: Vec<f64>,
    /// Quadratic cost `J_q(s)` at the iterates; `None` where not monitored.
    pub quadratic_costs: Vec<Option<f64>>,
    pub termination: Termination,
    pub ritz_values: Vec<f64>,
    pub ritz_estimates: Vec<f64>,
    /// Iteration budget of every inner run, in order.
    pub budgets: Vec<usize>,
    /// Columns of the second-level preconditioner.
    pub second_level_rank: usize,
    pub theta: f64,
    /// The saddle safeguard fell back to `s = 0`.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub index: usize,
    /// Nonlinear cost at `x^(k)`.
    pub cost: f64,
    /// `J_q(0)` of the linearization, equal to `cost` up to rounding.
    pub quadratic_cost_at_zero: f64,
    pub gradient_norm: f64,
    /// Nonlinear cost at `x^(k) + step_scale · s`.
    pub cost_after: f64,
    pub step_scale: f64,
    pub accepted: bool,
    pub inner: InnerRecord,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TgnResult {
    pub analysis: Vector,
    pub outer: Vec<OuterRecord>,
    pub final_cost: f64,
    pub final_gradient_norm: f64,
    /// Why the loop stopped before the budget, if it did.
    pub halted: Option<String>,
}

impl TgnResult {
    pub fn total_inner_iterations(&self) -> usize {
        self.outer.iter().map(|o| o.inner.total_iterations).sum()
    }

    pub fn costs(&self) -> Vec<f64> {
        let mut c: Vec<f64> = self.outer.iter().map(|o| o.cost).collect();
        c.push(self.final_cost);
        c
    }
}

pub(crate) struct InnerOutcome {
    pub(crate) s: Vector,
    pub(crate) report: SolveReport,
    /// Costs already shifted to absolute `J_q`.
    costs: Vec<Option<f64>>,
    budgets: Vec<usize>,
    rank: usize,
    theta: f64,
    fallback: bool,
}

fn absolute(costs: &[f64], offset: f64) -> Vec<Option<f64>> {
    costs
        .iter()
        .map(|c| Some(c + offset).filter(|v| v.is_finite()))
        .collect()
}

fn second_level(
    cfg: &TgnConfig,
    a: &Operator,
    previous: Option<&SolveReport>,
) -> Result<(Option<Operator>, usize, f64)> {
    let Some(prev) = previous else {
        return Ok((None, 0, 1.0));
    };
    let n = a.domain_dim();
    let values: Vec<f64> = prev.ritz.iter().map(|p| p.value).collect();
    match cfg.second_level {
        SecondLevel::None => Ok((None, 0, 1.0)),
        SecondLevel::RitzLmp => {
            let pairs = prev.converged_ritz();
            let theta = choose_theta(&values, pairs.len(), cfg.theta);
            let p = ritz_lmp(a, &pairs, theta)?;
            let rank = p.rank();
            Ok((Some(Operator::new(p)), rank, theta))
        }
        SecondLevel::SpectralLmp => {
            let used = prev.converged_ritz().len();
            let theta = choose_theta(&values, used, cfg.theta);
            let p = build_ritz_lmp(prev, n, theta, cfg.solver.ritz_threshold)?;
            let rank = p.rank();
            Ok((Some(Operator::new(p)), rank, theta))
        }
        SecondLevel::QnLmp => {
            let Some(dirs) = prev.search_directions.as_ref() else {
                return Ok((None, 0, 1.0));
            };
            let theta = choose_theta(&values, dirs.p.len().min(values.len()), cfg.theta);
            let p = build_qn_lmp(dirs, n, theta)?;
            let rank = p.rank();
            Ok((Some(Operator::new(p)), rank, theta))
        }
    }
}

pub(crate) fn inner_solve(
    sub: &InnerSubproblem,
    cfg: &TgnConfig,
    solver: &SolverConfig,
    previous: Option<&SolveReport>,
) -> Result<InnerOutcome> {
    let p = sub.control_dim();
    let j0 = sub.quadratic_cost(&Vector::zeros(p))?;
    let simple = |s: Vector, report: SolveReport, costs: Vec<Option<f64>>| InnerOutcome {
        s,
        report,
        costs,
        budgets: vec![solver.max_iterations],
        rank: 0,
        theta: 1.0,
        fallback: false,
    };
    match cfg.route {
        Route::PrimalPcg => {
            let run = SolverConfig {
                keep_search_directions: cfg.second_level == SecondLevel::QnLmp,
                ..solver.clone()
            };
            if cfg.first_level {
                let sys = first_level(sub)?;
                let (p2, rank, theta) = second_level(cfg, &sys.operator, previous)?;
                let (z, report) = pcg(&sys.operator, &sys.rhs, p2.as_ref().map(|o| o as &dyn LinearOperator), &run)?;
                let costs = absolute(&report.quadratic_costs, j0);
                Ok(InnerOutcome {
                    rank,
                    theta,
                    ..simple(sys.recover(&z)?, report, costs)
                })
            } else {
                let (form, pre) = match sub.formulation() {
                    Formulation::Strong => (
                        SystemForm::StrongPrimal,
                        crate::operators::SpdView::operator(sub.b(), crate::operators::SpdAction::Apply),
                    ),
                    Formulation::Weak => (SystemForm::WeakState, ftilde_preconditioner(cfg.ftilde, sub)?),
                };
                let sys = sub.assemble_normal(form)?;
                let (x, report) = pcg(&sys.operator, &sys.rhs, Some(&pre), &run)?;
                let costs = absolute(&report.quadratic_costs, j0);
                Ok(simple(sys.recover(&x)?, report, costs))
            }
        }
        Route::PrimalCgls => {
            let (s, report) = cgls(&sub.jacobian()?, &sub.rhs(), sub.weight().as_ref(), solver)?;
            let costs = absolute(&report.quadratic_costs, j0);
            Ok(simple(s, report, costs))
        }
        Route::DualRpcg => {
            let sol = rpcg(sub, solver)?;
            let costs = absolute(&sol.report.quadratic_costs, 0.0);
            Ok(simple(sol.s, sol.report, costs))
        }
        Route::DualGmres => {
            let sys = sub.assemble_dual(false)?;
            let monitor = |u: &Vector| {
                sys.recover(u)
                    .and_then(|s| sub.quadratic_cost(&s))
                    .unwrap_or(f64::NAN)
            };
            let m: Option<&dyn Fn(&Vector) -> f64> = solver.monitor_quadratic_cost.then_some(&monitor);
            let (u, report) = gmres(&sys.operator, &sys.rhs, None, solver, m)?;
            let costs = absolute(&report.quadratic_costs, 0.0);
            Ok(simple(sys.recover(&u)?, report, costs))
        }
        Route::SaddleMinres | Route::SaddleGmres => {
            let kind = if cfg.route == Route::SaddleMinres {
                SaddleSolver::Minres
            } else {
                SaddleSolver::Gmres
            };
            let schur = SchurApprox::ftilde(sub, cfg.ftilde)?;
            let pre = BlockPreconditioner::for_subproblem(cfg.block_variant(), sub, schur, cfg.ftilde)?;
            if cfg.safeguard {
                let out = safeguarded_inner_solve(sub, &pre, kind, solver)?;
                let costs = absolute(&out.report.quadratic_costs, 0.0);
                Ok(InnerOutcome {
                    s: out.s,
                    report: out.report,
                    costs,
                    budgets: out.budgets,
                    rank: 0,
                    theta: 1.0,
                    fallback: out.fallback,
                })
            } else {
                let sol = solve_saddle(sub, &pre, kind, solver)?;
                let costs = absolute(&sol.report.quadratic_costs, 0.0);
                Ok(simple(sol.s, sol.report, costs))
            }
        }
    }
}

fn record(out: &InnerOutcome, budgets: Vec<usize>) -> InnerRecord {
    let reruns: usize = budgets[..budgets.len().saturating_sub(1)].iter().sum();
    InnerRecord {
        iterations: out.report.iterations,
        total_iterations: reruns + out.report.iterations,
        residual_norms: out.report.residual_norms.clone(),
        quadratic_costs: out.costs.clone(),
        termination: out.report.termination,
        ritz_values: out.report.ritz.iter().map(|p| p.value).collect(),
        ritz_estimates: out.report.ritz.iter().map(|p| p.estimate).collect(),
        budgets,
        second_level_rank: out.rank,
        theta: out.theta,
        fallback: out.fallback,
    }
}

fn safe_cost(setup: &AssimilationSetup, x: &Vector) -> f64 {
    setup.cost(x).unwrap_or(f64::INFINITY)
}

/// Runs `cfg.outer` Gauss–Newton iterations from `x0` (the initial state for
/// strong problems, the stacked trajectory for weak ones).
///
/// With the safeguard on, an increment that raises the nonlinear cost is
/// first recomputed with a doubled inner budget (up to the safeguard cap),
/// then shortened by halving, and finally rejected, so the cost sequence
/// never increases. The loop stops early only on an inner breakdown or error.
pub fn tgn_run(setup: &AssimilationSetup, x0: &Vector, cfg: &TgnConfig) -> Result<TgnResult> {
    cfg.validate()?;
    let mut x = x0.clone();
    let mut outer = Vec::with_capacity(cfg.outer);
    let mut previous: Option<SolveReport> = None;
    let mut halted = None;
    for k in 0..cfg.outer {
        let start = Instant::now();
        let cost = setup.cost(&x)?;
        let gradient_norm = setup.gradient(&x)?.norm();
        let sub = match setup.linearize(&x) {
            Ok(sub) => sub,
            Err(e) => {
                halted = Some(format!("linearization failed at outer {k}: {e}"));
                break;
            }
        };
        let j0 = sub.quadratic_cost(&Vector::zeros(sub.control_dim()))?;
        let mut budget = cfg.solver.max_iterations;
        let mut budgets = Vec::new();
        let out = loop {
            let solver = SolverConfig {
                max_iterations: budget,
                ..cfg.solver.clone()
            };
            let out = match inner_solve(&sub, cfg, &solver, previous.as_ref()) {
                Ok(out) => out,
                Err(e) => {
                    halted = Some(format!("inner solve failed at outer {k}: {e}"));
                    break None;
                }
            };
            budgets.extend(out.budgets.iter().copied());
            let improves = safe_cost(setup, &(&x + &out.s)) <= cost;
            let can_escalate = out.report.termination == Termination::Budget
                && budget < cfg.solver.max_iterations * SAFEGUARD_CAP;
            if !cfg.safeguard || improves || !can_escalate {
                break Some(out);
            }
            log::info!("outer {k}: cost increased, doubling inner budget to {}", 2 * budget);
            budget = (2 * budget).min(cfg.solver.max_iterations * SAFEGUARD_CAP);
        };
        let Some(out) = out else { break };
        if out.report.termination == Termination::Breakdown {
            outer.push(OuterRecord {
                index: k,
                cost,
                quadratic_cost_at_zero: j0,
                gradient_norm,
                cost_after: cost,
                step_scale: 0.0,
                accepted: false,
                inner: record(&out, budgets),
                seconds: start.elapsed().as_secs_f64(),
            });
            halted = Some(format!("inner breakdown at outer {k}"));
            break;
        }
        let mut scale = 1.0;
        let mut cost_after = safe_cost(setup, &(&x + &out.s));
        if cfg.safeguard {
            let mut halvings = 0;
            while cost_after > cost && halvings < MAX_STEP_HALVINGS {
                scale *= 0.5;
                halvings += 1;
                cost_after = safe_cost(setup, &(&x + &out.s * scale));
            }
            if cost_after > cost {
                log::warn!("outer {k}: increment rejected");
                scale = 0.0;
                cost_after = cost;
            }
        }
        let accepted = scale > 0.0;
        if accepted {
            x += &out.s * scale;
        }
        outer.push(OuterRecord {
            index: k,
            cost,
            quadratic_cost_at_zero: j0,
            gradient_norm,
            cost_after,
            step_scale: scale,
            accepted,
            inner: record(&out, budgets),
            seconds: start.elapsed().as_secs_f64(),
        });
        previous = Some(out.report);
    }
    let final_cost = setup.cost(&x)?;
    let final_gradient_norm = setup.gradient(&x)?.norm();
    Ok(TgnResult {
        analysis: x,
        outer,
        final_cost,
        final_gradient_norm,
        halted,
    })
}
