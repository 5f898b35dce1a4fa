//! Restricted preconditioned conjugate gradients.
//!
//! The dual system `(R⁻¹ Hc D Hcᵀ + I) u = r̂_0` is solved with CG in the
//! (semi-definite) `Hc D Hcᵀ` inner product, where `Hc = G` and `D = B` for
//! strong problems and `Hc = Obs ∘ F`, `D = blockdiag(B, Q_i)` for weak ones.
//! Writing the primal residual as `r = Hcᵀ r̂` and the preconditioned residual
//! as `z = D Hcᵀ r̂`, every quantity of PCG on the forcing-form normal
//! equations (preconditioner `D`, initial guess `v_0 = f`) is carried in
//! observation space. In exact arithmetic the recovered iterates
//! `s_j = F (f + D Hcᵀ u_j)` coincide with those of that PCG run.
//!
//! Each iteration costs one application of `D Hcᵀ`, one of `Hc` and one of
//! `R⁻¹`; `Hc D Hcᵀ p̂` and `D Hcᵀ p̂` are updated by recurrence.

use super::{SolveReport, SolverConfig, Termination, BREAKDOWN_TOLERANCE};
use crate::error::Result;
use crate::operators::{LinearOperator, Vector};
use crate::problem::InnerSubproblem;

#[derive(Debug, Clone)]
pub struct RpcgSolution {
    /// Dual variable.
    pub u: Vector,
    /// Recovered increment.
    pub s: Vector,
    /// Iterates (when requested) are recovered increments `s_j`.
    pub report: SolveReport,
}

pub fn rpcg(sub: &InnerSubproblem, cfg: &SolverConfig) -> Result<RpcgSolution> {
    cfg.validate()?;
    let hc = sub.forcing_obs_operator()?;
    let d_cov = sub.d_cov();
    let r_cov = sub.r();
    let f = sub.misfit();
    let coupling = sub.coupling();
    let m = sub.obs_dim();

    let dht = |w: &Vector| -> Result<Vector> { Ok(d_cov.apply_unchecked(&hc.apply_adjoint(w)?)) };
    let recover = |v: &Vector| coupling.f_apply(v);

    let data_misfit = sub.innovations() - hc.apply(f)?;
    let base_cost = 0.5 * r_cov.inverse_norm_sq(&data_misfit);
    let r0 = r_cov.inverse_apply(&data_misfit);
    let mut r = r0.clone();
    let mut u = Vector::zeros(m);
    let mut v = f.clone();
    // z = D Hcᵀ r̂, w = Hc z
    let mut z = dht(&r)?;
    let mut w = hc.apply(&z)?;
    let mut rho = r.dot(&w);
    let rho0 = rho;
    // û = Hc D Hcᵀ u for the cost recurrence
    let mut u_hat = Vector::zeros(m);

    let mut report = SolveReport::start(rho.max(0.0).sqrt());
    let cost = |u_hat: &Vector, r: &Vector| base_cost - 0.5 * u_hat.dot(&(&r0 + r));
    if cfg.monitor_quadratic_cost {
        report.quadratic_costs.push(base_cost);
    }
    if cfg.keep_iterates {
        report.iterates.push(recover(&v)?);
    }

    if rho0 <= 0.0 {
        // r̂_0 lies in the null space of Hc D Hcᵀ, so u = r̂_0 is exact.
        u = r0.clone();
        report.iterations = 1;
        report.residual_norms.push(0.0);
        if cfg.monitor_quadratic_cost {
            report.quadratic_costs.push(base_cost);
        }
        if cfg.keep_iterates {
            report.iterates.push(recover(&v)?);
        }
        report.termination = Termination::Tolerance;
        let s = recover(&v)?;
        return Ok(RpcgSolution { u, s, report });
    }

    // Stored (r̂_i, z_i, w_i) scaled by 1/sqrt(ρ_i).
    let mut stored: Vec<(Vector, Vector, Vector)> = Vec::new();
    let push = |stored: &mut Vec<(Vector, Vector, Vector)>, r: &Vector, z: &Vector, w: &Vector, rho: f64| {
        let c = 1.0 / rho.sqrt();
        stored.push((r * c, z * c, w * c));
    };
    if cfg.reorthogonalize {
        push(&mut stored, &r, &z, &w, rho);
    }

    let mut p = r.clone();
    let mut p_z = z.clone();
    let mut t = w.clone();
    for _ in 0..cfg.max_iterations {
        let q = &p + r_cov.inverse_apply(&t);
        let curvature = t.dot(&q);
        if curvature <= BREAKDOWN_TOLERANCE * t.norm() * q.norm() {
            report.termination = Termination::Breakdown;
            break;
        }
        let alpha = rho / curvature;
        u.axpy(alpha, &p, 1.0);
        v.axpy(alpha, &p_z, 1.0);
        u_hat.axpy(alpha, &t, 1.0);
        r.axpy(-alpha, &q, 1.0);
        z = dht(&r)?;
        w = hc.apply(&z)?;
        if cfg.reorthogonalize {
            for _ in 0..2 {
                for (ri, zi, wi) in &stored {
                    let c = wi.dot(&r);
                    r.axpy(-c, ri, 1.0);
                    z.axpy(-c, zi, 1.0);
                    w.axpy(-c, wi, 1.0);
                }
            }
        }
        let rho_next = r.dot(&w);
        report.iterations += 1;
        report.residual_norms.push(rho_next.max(0.0).sqrt());
        if cfg.monitor_quadratic_cost {
            report.quadratic_costs.push(cost(&u_hat, &r));
        }
        if cfg.keep_iterates {
            report.iterates.push(recover(&v)?);
        }
        if rho_next <= 0.0 || rho_next.sqrt() <= cfg.tolerance * rho0.sqrt() {
            if rho_next <= 0.0 {
                // The remaining residual is invisible to the primal problem.
                u += &r;
            }
            report.termination = Termination::Tolerance;
            break;
        }
        if cfg.reorthogonalize {
            push(&mut stored, &r, &z, &w, rho_next);
        }
        let beta = rho_next / rho;
        rho = rho_next;
        p = &r + &p * beta;
        p_z = &z + &p_z * beta;
        t = &w + &t * beta;
    }
    let s = recover(&v)?;
    Ok(RpcgSolution { u, s, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::pcg_from;
    use crate::models::{DynamicalModel, LinearAdvection, Lorenz96, ObservationOperator, PointSelection, QuadraticPoint};
    use crate::operators::{materialize_dense, CovarianceModel, SpdAction, SpdView, DEFAULT_ORACLE_CAP};
    use crate::problem::{AssimilationSetup, ObservationWindow, SystemForm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn setup(weak: bool, n: usize, big_n: usize, seed: u64) -> (AssimilationSetup, Vector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model: Arc<dyn DynamicalModel> = Arc::new(Lorenz96::standard(n).unwrap());
        let windows = (0..=big_n)
            .map(|i| {
                let op: Arc<dyn ObservationOperator> =
                    Arc::new(PointSelection::strided(n, 4, i % 4).unwrap());
                let m = op.output_dim();
                let y = Vector::from_fn(m, |_, _| 8.0 + rng.gen_range(-2.0..2.0));
                ObservationWindow::new(y, op, CovarianceModel::scaled_identity(m, 0.7).unwrap().into_arc()).unwrap()
            })
            .collect();
        let xb = Vector::from_fn(n, |_, _| 8.0 + rng.gen_range(-1.0..1.0));
        let b = CovarianceModel::isotropic(&vec![1.0; n], 1.0).unwrap().into_arc();
        if weak {
            let q = (0..big_n).map(|_| CovarianceModel::scaled_identity(n, 0.3).unwrap().into_arc()).collect();
            let s = AssimilationSetup::weak(model, xb, b, windows, q).unwrap();
            let x = Vector::from_fn(n * (big_n + 1), |_, _| 8.0 + rng.gen_range(-1.0..1.0));
            (s, x)
        } else {
            let s = AssimilationSetup::strong(model, xb, b, windows).unwrap();
            let x = Vector::from_fn(n, |_, _| 8.0 + rng.gen_range(-1.0..1.0));
            (s, x)
        }
    }

    #[test]
    fn converged_solution_matches_dense_primal() {
        for weak in [false, true] {
            let (setup, x) = setup(weak, 12, 3, 1);
            let sub = setup.linearize(&x).unwrap();
            let form = if weak { SystemForm::WeakState } else { SystemForm::StrongPrimal };
            let sys = sub.assemble_normal(form).unwrap();
            let a = materialize_dense(&sys.operator, DEFAULT_ORACLE_CAP).unwrap();
            let exact = a.lu().solve(&sys.rhs).unwrap();
            let sol = rpcg(&sub, &SolverConfig::with_budget(200, 1e-13)).unwrap();
            assert!((&sol.s - &exact).norm() <= 1e-8 * exact.norm(), "weak={weak}");
            let dual = sub.assemble_dual(false).unwrap();
            let u_dense = materialize_dense(&dual.operator, DEFAULT_ORACLE_CAP).unwrap().lu().solve(&dual.rhs).unwrap();
            assert!((&sol.u - u_dense).norm() <= 1e-8 * sol.u.norm());
        }
    }

    #[test]
    fn iterates_match_background_preconditioned_pcg() {
        let (setup, x) = setup(false, 16, 2, 2);
        let sub = setup.linearize(&x).unwrap();
        let sys = sub.assemble_normal(SystemForm::StrongPrimal).unwrap();
        let b_op = SpdView::operator(sub.b(), SpdAction::Apply);
        let cfg = SolverConfig {
            keep_iterates: true,
            ..SolverConfig::with_budget(20.min(sub.obs_dim()), 1e-14)
        };
        let (_, primal) = pcg_from(&sys.operator, &sys.rhs, Some(&b_op), Some(sub.misfit()), &cfg).unwrap();
        let dual = rpcg(&sub, &cfg).unwrap();
        let count = primal.iterates.len().min(dual.report.iterates.len());
        assert!(count > 5);
        for j in 0..count {
            let (a, b) = (&primal.iterates[j], &dual.report.iterates[j]);
            assert!((a - b).norm() <= 1e-8 * a.norm().max(1.0), "iteration {j}");
        }
        for (c1, c2) in primal.residual_norms.iter().zip(&dual.report.residual_norms) {
            assert!((c1 - c2).abs() <= 1e-8 * primal.residual_norms[0]);
        }
        let offset = sub.quadratic_cost(&Vector::zeros(16)).unwrap();
        for (j, s) in dual.report.iterates.iter().enumerate() {
            let direct = sub.quadratic_cost(s).unwrap();
            assert!((dual.report.quadratic_costs[j] - direct).abs() <= 1e-9 * offset.max(1.0));
        }
    }

    #[test]
    fn zero_jacobian_converges_in_one_iteration() {
        let model: Arc<dyn DynamicalModel> = Arc::new(LinearAdvection::new(4).unwrap());
        let h: Arc<dyn ObservationOperator> = Arc::new(QuadraticPoint::new(4, vec![1, 3]).unwrap());
        let r = CovarianceModel::scaled_identity(2, 0.5).unwrap().into_arc();
        let setup = AssimilationSetup::strong(
            model,
            Vector::from_element(4, 1.0),
            CovarianceModel::scaled_identity(4, 1.0).unwrap().into_arc(),
            vec![ObservationWindow::new(Vector::from_vec(vec![1.0, 2.0]), h, r).unwrap()],
        )
        .unwrap();
        let sub = setup.linearize(&Vector::zeros(4)).unwrap();
        let sol = rpcg(&sub, &SolverConfig::default()).unwrap();
        assert_eq!(sol.report.iterations, 1);
        assert!((sol.s - Vector::from_element(4, 1.0)).amax() < 1e-15);
        assert!((sol.u - Vector::from_vec(vec![4.0, 8.0])).amax() < 1e-14);
    }
}
