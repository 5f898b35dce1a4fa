use super::ritz::{extract_ritz, extract_ritz_rayleigh, LanczosData};
use super::{
    Reorthogonalizer, SearchDirections, SolveReport, SolverConfig, Termination,
    BREAKDOWN_TOLERANCE,
};
use crate::error::{check_dim, Result};
use crate::operators::{LinearOperator, Vector};

/// Preconditioned conjugate gradients from a zero initial guess.
///
/// Residual norms are `sqrt(rᵀ P r)`. The monitored cost is
/// `½ xᵀ A x − bᵀ x`, evaluated as `−½ xᵀ (b + r)`.
pub fn pcg(
    a: &dyn LinearOperator,
    b: &Vector,
    precond: Option<&dyn LinearOperator>,
    cfg: &SolverConfig,
) -> Result<(Vector, SolveReport)> {
    pcg_from(a, b, precond, None, cfg)
}

/// [`pcg`] with an explicit warm start.
pub fn pcg_from(
    a: &dyn LinearOperator,
    b: &Vector,
    precond: Option<&dyn LinearOperator>,
    x0: Option<&Vector>,
    cfg: &SolverConfig,
) -> Result<(Vector, SolveReport)> {
    cfg.validate()?;
    let n = b.len();
    check_dim("PCG operator", n, a.codomain_dim())?;
    check_dim("PCG operator", n, a.domain_dim())?;
    if let Some(p) = precond {
        check_dim("PCG preconditioner", n, p.domain_dim())?;
        check_dim("PCG preconditioner", n, p.codomain_dim())?;
    }
    let apply_p = |r: &Vector| match precond {
        Some(p) => p.apply_unchecked(r),
        None => r.clone(),
    };

    let mut x = match x0 {
        Some(x0) => {
            check_dim("PCG initial guess", n, x0.len())?;
            x0.clone()
        }
        None => Vector::zeros(n),
    };
    let mut r = match x0 {
        Some(_) => b - a.apply_unchecked(&x),
        None => b.clone(),
    };
    let mut z = apply_p(&r);
    let mut rho = r.dot(&z);
    let rho0 = rho;

    let mut report = SolveReport::start(rho.max(0.0).sqrt());
    let cost = |x: &Vector, r: &Vector| -0.5 * x.dot(&(b + r));
    if cfg.monitor_quadratic_cost {
        report.quadratic_costs.push(cost(&x, &r));
    }
    if cfg.keep_iterates {
        report.iterates.push(x.clone());
    }
    let track_lanczos = cfg.ritz_pairs > 0;
    let rayleigh = track_lanczos && precond.is_some();
    let mut dirs = (cfg.keep_search_directions || rayleigh).then(SearchDirections::default);
    let mut reorth = Reorthogonalizer::default();
    let mut lanczos = LanczosData::default();
    if track_lanczos {
        lanczos.push_vector(&z, rho);
    }

    if rho0 <= 0.0 {
        report.termination = if rho0 == 0.0 {
            Termination::Tolerance
        } else {
            Termination::Breakdown
        };
        return Ok((x, report));
    }
    if cfg.reorthogonalize {
        reorth.push(&r, &z, rho);
    }

    let mut p = z.clone();
    for _ in 0..cfg.max_iterations {
        let ap = a.apply_unchecked(&p);
        let curvature = p.dot(&ap);
        if curvature <= BREAKDOWN_TOLERANCE * p.norm() * ap.norm() {
            report.termination = Termination::Breakdown;
            break;
        }
        let alpha = rho / curvature;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        if let Some(d) = dirs.as_mut() {
            d.p.push(p.clone());
            d.ap.push(ap);
        }
        z = apply_p(&r);
        if cfg.reorthogonalize {
            reorth.apply(&mut r, &mut z);
        }
        let rho_next = r.dot(&z);
        let beta = rho_next / rho;
        report.iterations += 1;
        report.residual_norms.push(rho_next.max(0.0).sqrt());
        if cfg.monitor_quadratic_cost {
            report.quadratic_costs.push(cost(&x, &r));
        }
        if cfg.keep_iterates {
            report.iterates.push(x.clone());
        }
        if track_lanczos {
            lanczos.push_coefficients(alpha, beta.max(0.0));
            lanczos.push_vector(&z, rho_next);
        }
        if rho_next < 0.0 {
            report.termination = Termination::Breakdown;
            break;
        }
        if rho_next.sqrt() <= cfg.tolerance * rho0.sqrt() {
            report.termination = Termination::Tolerance;
            break;
        }
        if cfg.reorthogonalize {
            reorth.push(&r, &z, rho_next);
        }
        rho = rho_next;
        p = &z + &p * beta;
    }

    if track_lanczos {
        let (pairs, truncated) = match (&dirs, rayleigh) {
            (Some(d), true) => extract_ritz_rayleigh(d, cfg.ritz_pairs, cfg.ritz_threshold),
            _ => extract_ritz(&lanczos, cfg.ritz_pairs, cfg.ritz_threshold),
        };
        report.ritz = pairs;
        report.ritz_truncated = truncated;
    }
    if cfg.keep_search_directions {
        report.search_directions = dirs;
    }
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{materialize_dense, Matrix, Operator};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &m * m.transpose() + Matrix::identity(n, n) * 0.5
    }

    #[test]
    fn identity_converges_in_one_step() {
        let b = Vector::from_fn(7, |i, _| i as f64 - 3.0);
        let (x, rep) = pcg(&Operator::identity(7), &b, None, &SolverConfig::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!((x - b).amax() < 1e-15);
        assert_eq!(rep.termination, Termination::Tolerance);
        assert_eq!(rep.residual_norms.len(), 2);
    }

    #[test]
    fn low_rank_update_terminates_early() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = Matrix::from_fn(50, 5, |_, _| rng.gen_range(-1.0..1.0));
        let a = Matrix::identity(50, 50) + &u * u.transpose();
        let b = Vector::from_fn(50, |_, _| rng.gen_range(-1.0..1.0));
        let cfg = SolverConfig::with_budget(6, 1e-12);
        let (x, rep) = pcg(&Operator::dense(a.clone()), &b, None, &cfg).unwrap();
        assert!(rep.iterations <= 6);
        let exact = a.clone().cholesky().unwrap().solve(&b);
        assert!((&a * &x - &b).norm() < 1e-10 * b.norm());
        assert!((x - exact).norm() < 1e-9);
    }

    #[test]
    fn cost_and_energy_error_decrease() {
        let a = random_spd(20, 2);
        let b = Vector::from_fn(20, |i, _| (i as f64).sin());
        let cfg = SolverConfig {
            keep_iterates: true,
            ..SolverConfig::with_budget(20, 1e-14)
        };
        let (_, rep) = pcg(&Operator::dense(a.clone()), &b, None, &cfg).unwrap();
        for w in rep.quadratic_costs.windows(2) {
            assert!(w[1] < w[0], "{} !< {}", w[1], w[0]);
        }
        let exact = a.clone().cholesky().unwrap().solve(&b);
        let energy: Vec<f64> = rep
            .iterates
            .iter()
            .map(|x| {
                let e = &exact - x;
                e.dot(&(&a * &e)).sqrt()
            })
            .collect();
        for w in energy.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        for (c, x) in rep.quadratic_costs.iter().zip(&rep.iterates) {
            let direct = 0.5 * x.dot(&(&a * x)) - b.dot(x);
            assert!((c - direct).abs() <= 1e-10 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn distinct_eigenvalue_count_bounds_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = Matrix::from_fn(60, 60, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
        for k in [3usize, 8, 20] {
            let diag = Vector::from_fn(60, |i, _| 1.0 + (i % k) as f64 * 0.7);
            let a = &q * Matrix::from_diagonal(&diag) * q.transpose();
            let a = (&a + a.transpose()) * 0.5;
            let b = Vector::from_fn(60, |_, _| rng.gen_range(-1.0..1.0));
            let cfg = SolverConfig::with_budget(k, 1e-10);
            let (x, rep) = pcg(&Operator::dense(a.clone()), &b, None, &cfg).unwrap();
            assert!(rep.iterations <= k);
            assert!((&a * x - &b).norm() < 1e-10 * b.norm() * 10.0, "k={k}");
        }
    }

    #[test]
    fn preconditioning_with_exact_inverse_takes_one_step() {
        let a = random_spd(10, 3);
        let inv = a.clone().try_inverse().unwrap();
        let b = Vector::from_element(10, 1.0);
        let p = Operator::dense(inv);
        let (x, rep) = pcg(&Operator::dense(a.clone()), &b, Some(&p), &SolverConfig::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!((&a * x - b).norm() < 1e-10);
    }

    #[test]
    fn indefinite_operator_breaks_down() {
        let a = Operator::dense(Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -1.0])));
        let b = Vector::from_vec(vec![1.0, 2.0]);
        let (_, rep) = pcg(&a, &b, None, &SolverConfig::default()).unwrap();
        assert_eq!(rep.termination, Termination::Breakdown);
    }

    #[test]
    fn search_directions_are_conjugate() {
        let a = random_spd(15, 7);
        let b = Vector::from_fn(15, |i, _| i as f64);
        let cfg = SolverConfig {
            keep_search_directions: true,
            ..SolverConfig::with_budget(8, 1e-12)
        };
        let (_, rep) = pcg(&Operator::dense(a.clone()), &b, None, &cfg).unwrap();
        let d = rep.search_directions.unwrap();
        assert_eq!(d.p.len(), rep.iterations);
        for i in 0..d.p.len() {
            assert!((&a * &d.p[i] - &d.ap[i]).amax() < 1e-12);
            for j in 0..i {
                let c = d.p[i].dot(&d.ap[j]) / (d.p[i].norm() * d.ap[j].norm());
                assert!(c.abs() < 1e-10);
            }
        }
        let m = materialize_dense(&Operator::dense(a.clone()), 100).unwrap();
        assert_eq!(m, a);
    }

    #[test]
    fn warm_start_at_solution_stops_immediately() {
        let a = random_spd(6, 9);
        let x = Vector::from_element(6, 2.0);
        let b = &a * &x;
        let (sol, rep) =
            pcg_from(&Operator::dense(a), &b, None, Some(&x), &SolverConfig::default()).unwrap();
        assert!(rep.iterations <= 1);
        assert!((sol - x).amax() < 1e-12);
    }

    #[test]
    fn invalid_config_rejected() {
        let a = Operator::identity(2);
        let b = Vector::zeros(2);
        let cfg = SolverConfig::with_budget(0, 1e-6);
        assert!(pcg(&a, &b, None, &cfg).is_err());
        let cfg = SolverConfig::with_budget(3, 1.5);
        assert!(pcg(&a, &b, None, &cfg).is_err());
    }
}
