use super::{Reorthogonalizer, SolveReport, SolverConfig, Termination, BREAKDOWN_TOLERANCE};
use crate::error::{check_dim, Result};
use crate::operators::{LinearOperator, SpdOperator, Vector};

/// CGLS for `min ½ ‖J s − b‖²_{W⁻¹}` from `s = 0`.
///
/// The data-space residual `r = b − J s` is recurred directly; the reported
/// residual norms are those of the normal equations, `‖Jᵀ W⁻¹ r‖`, which are
/// the residuals of unpreconditioned CG on `Jᵀ W⁻¹ J s = Jᵀ W⁻¹ b`. The
/// monitored cost is `½‖r‖²_{W⁻¹} − ½‖b‖²_{W⁻¹}`.
pub fn cgls(
    j: &dyn LinearOperator,
    b: &Vector,
    w: &dyn SpdOperator,
    cfg: &SolverConfig,
) -> Result<(Vector, SolveReport)> {
    cfg.validate()?;
    check_dim("CGLS data", j.codomain_dim(), b.len())?;
    check_dim("CGLS weight", j.codomain_dim(), w.dim())?;
    let normal = |r: &Vector| -> Result<Vector> { j.apply_adjoint(&w.inverse_apply(r)) };

    let mut s = Vector::zeros(j.domain_dim());
    let mut r = b.clone();
    let b_energy = 0.5 * w.inverse_norm_sq(b);
    let mut q = normal(&r)?;
    let mut gamma = q.norm_squared();
    let gamma0 = gamma;
    let mut report = SolveReport::start(gamma.sqrt());
    if cfg.monitor_quadratic_cost {
        report.quadratic_costs.push(0.0);
    }
    if cfg.keep_iterates {
        report.iterates.push(s.clone());
    }
    if gamma0 == 0.0 {
        report.termination = Termination::Tolerance;
        return Ok((s, report));
    }
    let mut reorth = Reorthogonalizer::default();
    if cfg.reorthogonalize {
        reorth.push(&q, &q, gamma);
    }

    let mut p = q.clone();
    for _ in 0..cfg.max_iterations {
        let t = j.apply(&p)?;
        let delta = w.inverse_norm_sq(&t);
        if delta <= BREAKDOWN_TOLERANCE * gamma {
            report.termination = Termination::Breakdown;
            break;
        }
        let alpha = gamma / delta;
        s.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &t, 1.0);
        q = normal(&r)?;
        if cfg.reorthogonalize {
            let mut copy = q.clone();
            reorth.apply(&mut q, &mut copy);
        }
        let gamma_next = q.norm_squared();
        report.iterations += 1;
        report.residual_norms.push(gamma_next.sqrt());
        if cfg.monitor_quadratic_cost {
            report
                .quadratic_costs
                .push(0.5 * w.inverse_norm_sq(&r) - b_energy);
        }
        if cfg.keep_iterates {
            report.iterates.push(s.clone());
        }
        if gamma_next.sqrt() <= cfg.tolerance * gamma0.sqrt() {
            report.termination = Termination::Tolerance;
            break;
        }
        if cfg.reorthogonalize {
            reorth.push(&q, &q, gamma_next);
        }
        let beta = gamma_next / gamma;
        gamma = gamma_next;
        p = &q + &p * beta;
    }
    Ok((s, report))
}
