use super::{Monitor, SolveReport, SolverConfig, Termination, BREAKDOWN_TOLERANCE};
use crate::error::{check_dim, Result};
use crate::operators::{LinearOperator, Matrix, Vector};

/// Full GMRES with modified Gram–Schmidt and right preconditioning.
///
/// The residual norms are those of the unpreconditioned system, `‖b − A x‖`.
/// With `reorthogonalize` set the Arnoldi step runs a second MGS pass.
pub fn gmres(
    a: &dyn LinearOperator,
    b: &Vector,
    precond: Option<&dyn LinearOperator>,
    cfg: &SolverConfig,
    monitor: Option<Monitor>,
) -> Result<(Vector, SolveReport)> {
    cfg.validate()?;
    let n = b.len();
    check_dim("GMRES operator", n, a.domain_dim())?;
    check_dim("GMRES operator", n, a.codomain_dim())?;
    if let Some(p) = precond {
        check_dim("GMRES preconditioner", n, p.domain_dim())?;
    }
    let apply_p = |v: &Vector| match precond {
        Some(p) => p.apply_unchecked(v),
        None => v.clone(),
    };

    let beta = b.norm();
    let mut report = SolveReport::start(beta);
    let zero = Vector::zeros(n);
    if let Some(m) = monitor {
        report.quadratic_costs.push(m(&zero));
    }
    if cfg.keep_iterates {
        report.iterates.push(zero.clone());
    }
    if beta == 0.0 {
        report.termination = Termination::Tolerance;
        return Ok((zero, report));
    }

    let max_k = cfg.max_iterations.min(n);
    let mut basis: Vec<Vector> = vec![b / beta];
    let mut h = Matrix::zeros(max_k + 1, max_k);
    let mut cs: Vec<f64> = Vec::with_capacity(max_k);
    let mut sn: Vec<f64> = Vec::with_capacity(max_k);
    let mut g = Vector::zeros(max_k + 1);
    g[0] = beta;

    let solution = |k: usize, h: &Matrix, g: &Vector, basis: &[Vector]| -> Vector {
        let mut y = Vector::zeros(k);
        for i in (0..k).rev() {
            let mut acc = g[i];
            for j in i + 1..k {
                acc -= h[(i, j)] * y[j];
            }
            y[i] = acc / h[(i, i)];
        }
        let mut combo = Vector::zeros(n);
        for (j, v) in basis[..k].iter().enumerate() {
            combo.axpy(y[j], v, 1.0);
        }
        apply_p(&combo)
    };

    let mut k = 0;
    let mut happy = false;
    while k < max_k {
        let mut w = a.apply_unchecked(&apply_p(&basis[k]));
        let w_norm = w.norm();
        let passes = if cfg.reorthogonalize { 2 } else { 1 };
        for _ in 0..passes {
            for (i, v) in basis.iter().enumerate() {
                let c = v.dot(&w);
                h[(i, k)] += c;
                w.axpy(-c, v, 1.0);
            }
        }
        let h_next = w.norm();
        h[(k + 1, k)] = h_next;
        for i in 0..k {
            let t = cs[i] * h[(i, k)] + sn[i] * h[(i + 1, k)];
            h[(i + 1, k)] = -sn[i] * h[(i, k)] + cs[i] * h[(i + 1, k)];
            h[(i, k)] = t;
        }
        let denom = h[(k, k)].hypot(h[(k + 1, k)]);
        if denom == 0.0 {
            report.termination = Termination::Breakdown;
            break;
        }
        cs.push(h[(k, k)] / denom);
        sn.push(h[(k + 1, k)] / denom);
        h[(k, k)] = denom;
        h[(k + 1, k)] = 0.0;
        g[k + 1] = -sn[k] * g[k];
        g[k] *= cs[k];
        k += 1;

        report.iterations = k;
        report.residual_norms.push(g[k].abs());
        if monitor.is_some() || cfg.keep_iterates {
            let x = solution(k, &h, &g, &basis);
            if let Some(m) = monitor {
                report.quadratic_costs.push(m(&x));
            }
            if cfg.keep_iterates {
                report.iterates.push(x);
            }
        }
        if h_next <= BREAKDOWN_TOLERANCE * w_norm.max(f64::MIN_POSITIVE) {
            happy = true;
            break;
        }
        if g[k].abs() <= cfg.tolerance * beta {
            report.termination = Termination::Tolerance;
            break;
        }
        basis.push(w / h_next);
    }
    if happy {
        report.termination = Termination::Tolerance;
    }
    let x = if k == 0 { zero } else { solution(k, &h, &g, &basis) };
    Ok((x, report))
}
