use serde::{Deserialize, Serialize};

use super::{BlockPreconditioner, BlockVariant};
use crate::error::{check_dim, Error, Result};
use crate::krylov::{gmres, minres, SolveReport, SolverConfig, Termination};
use crate::operators::Vector;
use crate::problem::InnerSubproblem;

/// Largest budget the safeguard escalates to, as a multiple of the initial one.
pub const SAFEGUARD_CAP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaddleSolver {
    Minres,
    Gmres,
}

#[derive(Debug, Clone)]
pub struct SaddleSolution {
    /// The increment, i.e. the last block of the solution.
    pub s: Vector,
    pub solution: Vector,
    /// `quadratic_costs` holds the least-squares cost at the extracted `s`;
    /// it is not monotone in general.
    pub report: SolveReport,
}

/// Solves `K x = (d, f, 0)` with `P` and returns the `s` block.
///
/// MINRES needs an SPD preconditioner and only accepts `P_D`.
pub fn solve_saddle(
    sub: &InnerSubproblem,
    precond: &BlockPreconditioner,
    solver: SaddleSolver,
    cfg: &SolverConfig,
) -> Result<SaddleSolution> {
    if solver == SaddleSolver::Minres && precond.variant() != BlockVariant::Pd {
        return Err(Error::InvalidParameter(format!(
            "MINRES needs an SPD preconditioner; {:?} is not",
            precond.variant()
        )));
    }
    let system = sub.assemble_augmented()?;
    let (m, p) = precond.dims();
    check_dim("block preconditioner for K", system.dim(), m + 2 * p)?;
    let cost = |x: &Vector| {
        sub.quadratic_cost(&x.rows(m + p, p).into_owned())
            .unwrap_or(f64::NAN)
    };
    let monitor: Option<&dyn Fn(&Vector) -> f64> = if cfg.monitor_quadratic_cost {
        Some(&cost)
    } else {
        None
    };
    let (solution, report) = match solver {
        SaddleSolver::Minres => minres(&system.operator, &system.rhs, Some(precond), cfg, monitor)?,
        SaddleSolver::Gmres => gmres(&system.operator, &system.rhs, Some(precond), cfg, monitor)?,
    };
    Ok(SaddleSolution {
        s: system.recover(&solution)?,
        solution,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct SafeguardOutcome {
    pub s: Vector,
    /// Report of the last run.
    pub report: SolveReport,
    /// Budget of every run, in order.
    pub budgets: Vec<usize>,
    /// Cost at `s = 0`.
    pub initial_cost: f64,
    /// Cost at the returned `s`.
    pub cost: f64,
    /// No iterate improved on `s = 0`, which is returned instead.
    pub fallback: bool,
}

impl SafeguardOutcome {
    pub fn escalations(&self) -> usize {
        self.budgets.len().saturating_sub(1)
    }
}

/// Reruns the saddle solve with a doubled budget until the cost at `s` is no
/// larger than at `s = 0`, up to [`SAFEGUARD_CAP`] times the initial budget.
/// At the cap the best iterate of the last run is returned, or `s = 0` with
/// `fallback` set when none improves.
pub fn safeguarded_inner_solve(
    sub: &InnerSubproblem,
    precond: &BlockPreconditioner,
    solver: SaddleSolver,
    cfg: &SolverConfig,
) -> Result<SafeguardOutcome> {
    cfg.validate()?;
    let p = sub.control_dim();
    let initial_cost = sub.quadratic_cost(&Vector::zeros(p))?;
    let cap = cfg.max_iterations * SAFEGUARD_CAP;
    let mut budgets = Vec::new();
    let mut budget = cfg.max_iterations;
    loop {
        budgets.push(budget);
        let run = SolverConfig {
            max_iterations: budget,
            keep_iterates: true,
            monitor_quadratic_cost: true,
            ..cfg.clone()
        };
        let sol = solve_saddle(sub, precond, solver, &run)?;
        let cost = sub.quadratic_cost(&sol.s)?;
        if cost <= initial_cost {
            return Ok(SafeguardOutcome {
                s: sol.s,
                report: sol.report,
                budgets,
                initial_cost,
                cost,
                fallback: false,
            });
        }
        if budget >= cap || sol.report.termination != Termination::Budget {
            log::warn!(
                "safeguard: cost {cost:.6e} above {initial_cost:.6e} after {} runs",
                budgets.len()
            );
            let (m, _) = precond.dims();
            let best = sol
                .report
                .quadratic_costs
                .iter()
                .enumerate()
                .filter(|(_, c)| c.is_finite())
                .min_by(|a, b| a.1.total_cmp(b.1));
            return Ok(match best {
                Some((k, &c)) if c < initial_cost => SafeguardOutcome {
                    s: sol.report.iterates[k].rows(m + p, p).into_owned(),
                    report: sol.report,
                    budgets,
                    initial_cost,
                    cost: c,
                    fallback: false,
                },
                _ => SafeguardOutcome {
                    s: Vector::zeros(p),
                    report: sol.report,
                    budgets,
                    initial_cost,
                    cost: initial_cost,
                    fallback: true,
                },
            });
        }
        budget = (2 * budget).min(cap);
    }
}
