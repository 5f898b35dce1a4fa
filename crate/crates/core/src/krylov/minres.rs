use super::{Monitor, SolveReport, SolverConfig, Termination};
use crate::error::{check_dim, Result};
use crate::operators::{LinearOperator, Vector};

/// Preconditioned MINRES (Paige–Saunders) from a zero initial guess.
///
/// `A` must be symmetric and `P` symmetric positive definite. Residual norms
/// are `‖r‖_P`. A negative `rᵀ P r` means `P` is not positive definite and
/// ends the solve with a breakdown.
pub fn minres(
    a: &dyn LinearOperator,
    b: &Vector,
    precond: Option<&dyn LinearOperator>,
    cfg: &SolverConfig,
    monitor: Option<Monitor>,
) -> Result<(Vector, SolveReport)> {
    cfg.validate()?;
    let n = b.len();
    check_dim("MINRES operator", n, a.domain_dim())?;
    check_dim("MINRES operator", n, a.codomain_dim())?;
    if let Some(p) = precond {
        check_dim("MINRES preconditioner", n, p.domain_dim())?;
    }
    let apply_p = |r: &Vector| match precond {
        Some(p) => p.apply_unchecked(r),
        None => r.clone(),
    };

    let mut x = Vector::zeros(n);
    let mut r1 = b.clone();
    let mut y = apply_p(&r1);
    let beta1_sq = r1.dot(&y);
    let mut report = SolveReport::start(beta1_sq.max(0.0).sqrt());
    let record = |report: &mut SolveReport, x: &Vector| {
        if let Some(m) = monitor {
            report.quadratic_costs.push(m(x));
        }
        if cfg.keep_iterates {
            report.iterates.push(x.clone());
        }
    };
    record(&mut report, &x);
    if beta1_sq < 0.0 {
        report.termination = Termination::Breakdown;
        return Ok((x, report));
    }
    if beta1_sq == 0.0 {
        report.termination = Termination::Tolerance;
        return Ok((x, report));
    }

    let beta1 = beta1_sq.sqrt();
    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs = -1.0;
    let mut sn = 0.0;
    let mut w = Vector::zeros(n);
    let mut w2 = Vector::zeros(n);
    let mut r2 = r1.clone();

    for itn in 1..=cfg.max_iterations {
        let v = &y / beta;
        y = a.apply_unchecked(&v);
        if itn >= 2 {
            y.axpy(-beta / oldb, &r1, 1.0);
        }
        let alfa = v.dot(&y);
        y.axpy(-alfa / beta, &r2, 1.0);
        r1 = std::mem::replace(&mut r2, y.clone());
        y = apply_p(&r2);
        oldb = beta;
        let beta_sq = r2.dot(&y);
        if beta_sq < 0.0 {
            report.termination = Termination::Breakdown;
            break;
        }
        beta = beta_sq.sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let w1 = std::mem::replace(&mut w2, w.clone());
        w = (&v - &w1 * oldeps - &w2 * delta) / gamma;
        x.axpy(phi, &w, 1.0);

        report.iterations = itn;
        report.residual_norms.push(phibar.abs());
        record(&mut report, &x);
        if phibar.abs() <= cfg.tolerance * beta1 || beta == 0.0 {
            report.termination = Termination::Tolerance;
            break;
        }
    }
    Ok((x, report))
}
