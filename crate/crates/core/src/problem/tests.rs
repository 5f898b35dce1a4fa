use std::sync::Arc;

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::models::{LinearAdvection, Lorenz96, PointSelection, QuadraticPoint};
use crate::operators::{materialize_dense, CovarianceModel, LinearOperator, Matrix, DEFAULT_ORACLE_CAP};

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

fn cov(n: usize, sigma: f64) -> Arc<dyn SpdOperator> {
    CovarianceModel::scaled_identity(n, sigma).unwrap().into_arc()
}

fn window(op: Arc<dyn ObservationOperator>, y: Vector, sigma: f64) -> ObservationWindow {
    let m = op.output_dim();
    ObservationWindow::new(y, op, cov(m, sigma)).unwrap()
}

fn dense(op: &crate::operators::Operator) -> Matrix {
    materialize_dense(op, DEFAULT_ORACLE_CAP).unwrap()
}

fn solve(a: &Matrix, b: &Vector) -> Vector {
    a.clone().lu().solve(b).expect("nonsingular")
}

fn rel(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// `n = 1`, `N = 1`, identity model and observations, unit covariances.
fn scalar_setup(weak: bool, y: [f64; 2], sigma: f64) -> AssimilationSetup {
    let model: Arc<dyn DynamicalModel> = Arc::new(LinearAdvection::new(1).unwrap());
    let h: Arc<dyn ObservationOperator> = Arc::new(PointSelection::new(1, vec![0]).unwrap());
    let windows = y
        .iter()
        .map(|&yi| window(h.clone(), v(&[yi]), sigma))
        .collect();
    if weak {
        AssimilationSetup::weak(model, v(&[0.0]), cov(1, sigma), windows, vec![cov(1, sigma)])
            .unwrap()
    } else {
        AssimilationSetup::strong(model, v(&[0.0]), cov(1, sigma), windows).unwrap()
    }
}

/// Lorenz-96 twin with mixed linear and quadratic observations.
fn l96_setup(formulation: Formulation, n: usize, big_n: usize, seed: u64) -> (AssimilationSetup, Vector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model: Arc<dyn DynamicalModel> = Arc::new(Lorenz96::standard(n).unwrap());
    let x0 = Vector::from_fn(n, |_, _| 8.0 + rng.gen_range(-2.0..2.0));
    let truth = propagate(model.as_ref(), &x0, big_n).unwrap();
    let mut windows = Vec::new();
    for (i, xi) in truth.iter().enumerate() {
        let op: Arc<dyn ObservationOperator> = if i % 2 == 0 {
            Arc::new(PointSelection::strided(n, 3, i % 3).unwrap())
        } else {
            Arc::new(QuadraticPoint::new(n, (0..n).step_by(5).collect()).unwrap())
        };
        let y = op.observe(xi).unwrap().map(|t| t + rng.gen_range(-0.3..0.3));
        windows.push(window(op, y, 0.5));
    }
    let xb = x0.map(|t| t + rng.gen_range(-0.5..0.5));
    let b = CovarianceModel::isotropic(&vec![0.8; n], 1.0).unwrap().into_arc();
    let setup = match formulation {
        Formulation::Strong => AssimilationSetup::strong(model, xb, b, windows).unwrap(),
        Formulation::Weak => {
            let q = (0..big_n).map(|_| cov(n, 0.2)).collect();
            AssimilationSetup::weak(model, xb, b, windows, q).unwrap()
        }
    };
    let point = match formulation {
        Formulation::Strong => x0.map(|t| t + rng.gen_range(-0.3..0.3)),
        Formulation::Weak => {
            let traj = stack_blocks(&truth);
            traj.map(|t| t + rng.gen_range(-0.3..0.3))
        }
    };
    (setup, point)
}

/// Advection with sparse selection: a fully linear problem.
fn linear_setup(formulation: Formulation, n: usize, big_n: usize, seed: u64) -> AssimilationSetup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model: Arc<dyn DynamicalModel> = Arc::new(LinearAdvection::new(n).unwrap());
    let windows = (0..=big_n)
        .map(|i| {
            let op: Arc<dyn ObservationOperator> =
                Arc::new(PointSelection::strided(n, 2, i % 2).unwrap());
            let m = op.output_dim();
            let y = Vector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
            let r = CovarianceModel::diagonal(&(0..m).map(|_| rng.gen_range(0.3..1.0)).collect::<Vec<_>>())
                .unwrap()
                .into_arc();
            ObservationWindow::new(y, op, r).unwrap()
        })
        .collect();
    let xb = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let b = CovarianceModel::isotropic(&vec![1.0; n], 1.0).unwrap().into_arc();
    match formulation {
        Formulation::Strong => AssimilationSetup::strong(model, xb, b, windows).unwrap(),
        Formulation::Weak => {
            let q = (0..big_n)
                .map(|_| {
                    CovarianceModel::diagonal(&(0..n).map(|_| rng.gen_range(0.2..0.6)).collect::<Vec<_>>())
                        .unwrap()
                        .into_arc()
                })
                .collect();
            AssimilationSetup::weak(model, xb, b, windows, q).unwrap()
        }
    }
}

#[test]
fn weak_cost_hand_example() {
    let setup = scalar_setup(true, [0.0, 0.0], 1.0);
    assert!((setup.cost_weak(&v(&[1.0, 1.0])).unwrap() - 1.5).abs() < 1e-15);
}

#[test]
fn strong_cost_hand_example() {
    let setup = scalar_setup(false, [1.0, 1.0], 1.0);
    assert!((setup.cost_strong(&v(&[0.0])).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn doubling_variances_halves_cost() {
    let base = scalar_setup(true, [0.3, -0.2], 1.0);
    let doubled = scalar_setup(true, [0.3, -0.2], 2f64.sqrt());
    let x = v(&[1.0, 0.7]);
    let ratio = base.cost_weak(&x).unwrap() / doubled.cost_weak(&x).unwrap();
    assert!((ratio - 2.0).abs() < 1e-13);
}

#[test]
fn perfect_data_costs_vanish() {
    let n = 12;
    let model: Arc<dyn DynamicalModel> = Arc::new(Lorenz96::standard(n).unwrap());
    let x0 = Vector::from_fn(n, |i, _| 8.0 + (i as f64).sin());
    let truth = propagate(model.as_ref(), &x0, 4).unwrap();
    let h: Arc<dyn ObservationOperator> = Arc::new(QuadraticPoint::new(n, vec![1, 4, 9]).unwrap());
    let windows: Vec<_> = truth
        .iter()
        .map(|x| window(h.clone(), h.observe(x).unwrap(), 1.0))
        .collect();
    let strong =
        AssimilationSetup::strong(model.clone(), x0.clone(), cov(n, 1.0), windows.clone()).unwrap();
    assert_eq!(strong.cost_strong(&x0).unwrap(), 0.0);
    let weak =
        AssimilationSetup::weak(model, x0.clone(), cov(n, 1.0), windows, vec![cov(n, 1.0); 4])
            .unwrap();
    let traj = stack_blocks(&truth);
    assert_eq!(weak.cost_weak(&traj).unwrap(), 0.0);
    let sub = weak.linearize(&traj).unwrap();
    assert_eq!(sub.innovations().amax(), 0.0);
    assert_eq!(sub.misfit().amax(), 0.0);
}

#[test]
fn strong_cost_matches_weak_on_model_trajectory() {
    let (setup, x) = l96_setup(Formulation::Weak, 20, 4, 11);
    let x0 = x.rows(0, 20).into_owned();
    let traj = setup.trajectory_from(&x0).unwrap();
    let strong = setup.cost_strong(&x0).unwrap();
    let weak = setup.cost_weak(&traj).unwrap();
    assert!((strong - weak).abs() <= 1e-12 * strong.max(1.0));
}

#[test]
fn weak_cost_on_strong_setup_rejected() {
    let setup = scalar_setup(false, [0.0, 0.0], 1.0);
    assert!(matches!(
        setup.cost_weak(&v(&[0.0, 0.0])),
        Err(Error::IncompatibleFormulation(_))
    ));
}

fn check_gradient_fd(formulation: Formulation) {
    let (setup, x) = l96_setup(formulation, 40, 6, 3);
    let grad = setup.gradient(&x).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..3 {
        let dir = Vector::from_fn(x.len(), |_, _| rng.gen_range(-1.0..1.0));
        let eps = 1e-5;
        let fd = (setup.cost(&(&x + &dir * eps)).unwrap() - setup.cost(&(&x - &dir * eps)).unwrap())
            / (2.0 * eps);
        let an = grad.dot(&dir);
        assert!((fd - an).abs() <= 1e-6 * an.abs(), "{formulation:?}: fd {fd} vs {an}");
    }
}

#[test]
fn strong_gradient_matches_finite_differences() {
    check_gradient_fd(Formulation::Strong);
}

#[test]
fn weak_gradient_matches_finite_differences() {
    check_gradient_fd(Formulation::Weak);
}

#[test]
fn strong_linear_gradient_is_normal_residual() {
    let setup = linear_setup(Formulation::Strong, 10, 3, 5);
    let sub = setup.linearize(&Vector::zeros(10)).unwrap();
    let sys = sub.assemble_normal(SystemForm::StrongPrimal).unwrap();
    let a = dense(&sys.operator);
    let x0 = Vector::from_fn(10, |i, _| (i as f64 * 0.7).cos());
    let expected = &a * &x0 - &sys.rhs;
    let grad = setup.gradient_strong(&x0).unwrap();
    assert!((grad - &expected).amax() <= 1e-12 * expected.amax().max(1.0));
}

#[test]
fn quadratic_model_is_consistent_at_zero() {
    for formulation in [Formulation::Strong, Formulation::Weak] {
        let (setup, x) = l96_setup(formulation, 40, 5, 21);
        let sub = setup.linearize(&x).unwrap();
        let zero = Vector::zeros(sub.control_dim());
        let jq = sub.quadratic_cost(&zero).unwrap();
        let j = setup.cost(&x).unwrap();
        assert!((jq - j).abs() <= 1e-10 * j.max(1.0), "{formulation:?}: {jq} vs {j}");
        let gq = sub.quadratic_gradient(&zero).unwrap();
        let g = setup.gradient(&x).unwrap();
        assert!(rel(&gq, &g) <= 1e-10, "{formulation:?}");
    }
}

#[test]
fn g_operator_is_composition_of_jacobians() {
    let (setup, x) = l96_setup(Formulation::Strong, 16, 4, 8);
    let sub = setup.linearize(&x).unwrap();
    let g = sub.g_operator();
    assert!(crate::models::adjoint_test(&g, 20, 2).unwrap() <= 1e-12);
    let dir = Vector::from_fn(16, |i, _| ((i * 5) % 7) as f64 / 7.0 - 0.4);
    let gd = g.apply(&dir).unwrap();
    let observe_all = |x0: &Vector| -> Vector {
        let states = propagate(setup.model().as_ref(), x0, setup.num_windows()).unwrap();
        let parts: Vec<Vector> = setup
            .windows()
            .iter()
            .zip(&states)
            .map(|(w, s)| w.operator.observe(s).unwrap())
            .collect();
        stack_blocks(&parts)
    };
    let base = observe_all(&x);
    let err = |eps: f64| ((observe_all(&(&x + &dir * eps)) - &base) / eps - &gd).norm();
    let ratio = err(1e-3) / err(5e-4);
    assert!((ratio - 2.0).abs() < 0.1, "first-order remainder ratio {ratio}");
}

#[test]
fn one_inner_solve_minimizes_linear_problem() {
    for formulation in [Formulation::Strong, Formulation::Weak] {
        let setup = linear_setup(formulation, 8, 3, 13);
        let x = Vector::from_fn(setup.control_dim(), |i, _| (i as f64 * 0.3).sin());
        let sub = setup.linearize(&x).unwrap();
        let form = match formulation {
            Formulation::Strong => SystemForm::StrongPrimal,
            Formulation::Weak => SystemForm::WeakState,
        };
        let sys = sub.assemble_normal(form).unwrap();
        let s = solve(&dense(&sys.operator), &sys.rhs);
        let grad = setup.gradient(&(&x + s)).unwrap();
        assert!(grad.amax() <= 1e-8, "{formulation:?}: {}", grad.amax());
    }
}

fn two_by_two() -> InnerSubproblem {
    let model: Arc<dyn DynamicalModel> = Arc::new(LinearAdvection::new(2).unwrap());
    let h: Arc<dyn ObservationOperator> = Arc::new(PointSelection::new(2, vec![0]).unwrap());
    let setup = AssimilationSetup::strong(
        model,
        Vector::zeros(2),
        cov(2, 1.0),
        vec![window(h, v(&[1.0]), 1.0)],
    )
    .unwrap();
    setup.linearize(&Vector::zeros(2)).unwrap()
}

#[test]
fn strong_primal_hand_example() {
    let sub = two_by_two();
    let sys = sub.assemble_normal(SystemForm::StrongPrimal).unwrap();
    let a = dense(&sys.operator);
    assert!((a - Matrix::from_diagonal(&v(&[2.0, 1.0]))).amax() < 1e-15);
    let s = solve(&dense(&sys.operator), &sys.rhs);
    assert!((s - v(&[0.5, 0.0])).amax() < 1e-15);
}

#[test]
fn dual_hand_example() {
    let sub = two_by_two();
    let sys = sub.assemble_dual(false).unwrap();
    let u = solve(&dense(&sys.operator), &sys.rhs);
    assert!((u[0] - 0.5).abs() < 1e-15);
    assert!((sys.recover(&u).unwrap() - v(&[0.5, 0.0])).amax() < 1e-15);
}

#[test]
fn dual_with_zero_jacobian_decouples() {
    let model: Arc<dyn DynamicalModel> = Arc::new(LinearAdvection::new(3).unwrap());
    let h: Arc<dyn ObservationOperator> = Arc::new(QuadraticPoint::new(3, vec![0, 2]).unwrap());
    let r = CovarianceModel::diagonal(&[0.5, 2.0]).unwrap().into_arc();
    let xb = v(&[0.4, -1.0, 0.3]);
    let setup = AssimilationSetup::strong(
        model,
        xb.clone(),
        cov(3, 1.0),
        vec![ObservationWindow::new(v(&[1.0, 2.0]), h, r).unwrap()],
    )
    .unwrap();
    let x0 = Vector::zeros(3);
    let sub = setup.linearize(&x0).unwrap();
    let sys = sub.assemble_dual(false).unwrap();
    let u = solve(&dense(&sys.operator), &sys.rhs);
    let expected_u = v(&[1.0 / 0.25, 2.0 / 4.0]);
    assert!((&u - expected_u).amax() < 1e-14);
    assert!((sys.recover(&u).unwrap() - (xb - x0)).amax() < 1e-14);
}

#[test]
fn dual_spectrum_is_at_least_one() {
    for formulation in [Formulation::Strong, Formulation::Weak] {
        let (setup, x) = l96_setup(formulation, 12, 3, 4);
        let sub = setup.linearize(&x).unwrap();
        let a = dense(&sub.assemble_dual(false).unwrap().operator);
        for ev in a.complex_eigenvalues().iter() {
            assert!(ev.re >= 1.0 - 1e-10 && ev.im.abs() < 1e-8, "{ev}");
        }
        let p = dense(&sub.assemble_dual(true).unwrap().operator);
        assert!((&p - p.transpose()).amax() <= 1e-12 * p.amax());
        let eig = SymmetricEigen::new(p).eigenvalues;
        assert!(eig.min() >= 1.0 - 1e-10);
    }
}

#[test]
fn dual_rejects_empty_observations() {
    let model: Arc<dyn DynamicalModel> = Arc::new(LinearAdvection::new(3).unwrap());
    let h: Arc<dyn ObservationOperator> = Arc::new(PointSelection::new(3, vec![]).unwrap());
    let setup = AssimilationSetup::weak(
        model,
        Vector::zeros(3),
        cov(3, 1.0),
        vec![window(h.clone(), Vector::zeros(0), 1.0), window(h, Vector::zeros(0), 1.0)],
        vec![cov(3, 1.0)],
    )
    .unwrap();
    let sub = setup.linearize(&Vector::from_element(6, 0.5)).unwrap();
    assert!(sub.assemble_dual(false).is_err());
}

#[test]
fn weak_state_without_observations_propagates_misfits() {
    let model: Arc<dyn DynamicalModel> = Arc::new(Lorenz96::standard(6).unwrap());
    let h: Arc<dyn ObservationOperator> = Arc::new(PointSelection::new(6, vec![]).unwrap());
    let windows = (0..4).map(|_| window(h.clone(), Vector::zeros(0), 1.0)).collect();
    let setup = AssimilationSetup::weak(
        model,
        Vector::from_element(6, 8.2),
        cov(6, 1.0),
        windows,
        vec![cov(6, 0.5); 3],
    )
    .unwrap();
    let x = Vector::from_fn(24, |i, _| 8.0 + (i as f64 * 0.4).sin());
    let sub = setup.linearize(&x).unwrap();
    let sys = sub.assemble_normal(SystemForm::WeakState).unwrap();
    let s = solve(&dense(&sys.operator), &sys.rhs);
    let expected = sub.coupling().f_apply(sub.misfit()).unwrap();
    assert!(rel(&s, &expected) <= 1e-10);
}

#[test]
fn primal_operators_are_spd() {
    let (setup, x) = l96_setup(Formulation::Weak, 10, 3, 6);
    let sub = setup.linearize(&x).unwrap();
    for form in [SystemForm::WeakState, SystemForm::WeakForcing] {
        let a = dense(&sub.assemble_normal(form).unwrap().operator);
        assert!((&a - a.transpose()).amax() <= 1e-10 * a.amax());
        assert!(SymmetricEigen::new(a).eigenvalues.min() > 0.0);
    }
    let (setup, x) = l96_setup(Formulation::Strong, 10, 3, 6);
    let sub = setup.linearize(&x).unwrap();
    let a = dense(&sub.assemble_normal(SystemForm::StrongPrimal).unwrap().operator);
    assert!((&a - a.transpose()).amax() <= 1e-10 * a.amax());
    assert!(SymmetricEigen::new(a).eigenvalues.min() > 0.0);
}

#[test]
fn incompatible_forms_rejected() {
    let (setup, x) = l96_setup(Formulation::Strong, 8, 2, 1);
    let sub = setup.linearize(&x).unwrap();
    for form in [SystemForm::WeakState, SystemForm::WeakForcing] {
        assert!(matches!(
            sub.assemble_normal(form),
            Err(Error::IncompatibleFormulation(_))
        ));
    }
    let (setup, x) = l96_setup(Formulation::Weak, 8, 2, 1);
    let sub = setup.linearize(&x).unwrap();
    assert!(sub.assemble_normal(SystemForm::StrongPrimal).is_err());
}

#[test]
fn augmented_schur_elimination_gives_weak_state() {
    let (setup, x) = l96_setup(Formulation::Weak, 6, 2, 17);
    let sub = setup.linearize(&x).unwrap();
    let k = dense(&sub.assemble_augmented().unwrap().operator);
    assert!((&k - k.transpose()).amax() <= 1e-14 * k.amax());
    let aug = sub.assemble_augmented().unwrap();
    let m = sub.obs_dim();
    let p = sub.control_dim();
    let q = m + p;
    let a11 = k.view((0, 0), (q, q)).into_owned();
    let a12 = k.view((0, q), (q, p)).into_owned();
    let a11_inv = a11.clone().try_inverse().unwrap();
    let schur = a12.transpose() * &a11_inv * &a12;
    let b1 = aug.rhs.rows(0, q).into_owned();
    let weak = sub.assemble_normal(SystemForm::WeakState).unwrap();
    let aw = dense(&weak.operator);
    assert!((&schur - &aw).amax() <= 1e-10 * aw.amax());
    let bw = a12.transpose() * &a11_inv * &b1;
    assert!(rel(&bw, &weak.rhs) <= 1e-10);
    let s_aug = aug.recover(&solve(&k, &aug.rhs)).unwrap();
    let s_w = solve(&aw, &weak.rhs);
    assert!(rel(&s_aug, &s_w) <= 1e-10);
}

#[test]
fn all_routes_agree() {
    for formulation in [Formulation::Strong, Formulation::Weak] {
        let (setup, x) = l96_setup(formulation, 10, 3, 29);
        let sub = setup.linearize(&x).unwrap();
        let forms: &[SystemForm] = match formulation {
            Formulation::Strong => &[SystemForm::StrongPrimal],
            Formulation::Weak => &[SystemForm::WeakState, SystemForm::WeakForcing],
        };
        let mut solutions = Vec::new();
        for &form in forms
            .iter()
            .chain(&[SystemForm::Dual, SystemForm::Psas, SystemForm::Augmented])
        {
            let sys = sub.assemble_normal(form).unwrap();
            let sol = solve(&dense(&sys.operator), &sys.rhs);
            solutions.push((form, sys.recover(&sol).unwrap()));
        }
        let reference = solutions[0].1.clone();
        for (form, s) in &solutions {
            assert!(rel(s, &reference) <= 1e-8, "{formulation:?} {form:?}");
        }
    }
}

#[test]
fn setup_validates_dimensions() {
    let model: Arc<dyn DynamicalModel> = Arc::new(LinearAdvection::new(3).unwrap());
    let h: Arc<dyn ObservationOperator> = Arc::new(PointSelection::new(3, vec![0]).unwrap());
    assert!(ObservationWindow::new(v(&[1.0, 2.0]), h.clone(), cov(1, 1.0)).is_err());
    assert!(ObservationWindow::new(v(&[1.0]), h.clone(), cov(2, 1.0)).is_err());
    let w = window(h, v(&[1.0]), 1.0);
    assert!(AssimilationSetup::strong(model.clone(), Vector::zeros(2), cov(3, 1.0), vec![w.clone()]).is_err());
    assert!(AssimilationSetup::strong(model.clone(), Vector::zeros(3), cov(3, 1.0), vec![]).is_err());
    assert!(AssimilationSetup::weak(model, Vector::zeros(3), cov(3, 1.0), vec![w.clone(), w], vec![]).is_err());
}

#[test]
fn augmented_operator_is_exactly_symmetric_for_linear_dynamics() {
    let setup = linear_setup(Formulation::Weak, 6, 3, 2);
    let sub = setup.linearize(&Vector::zeros(24)).unwrap();
    let k = dense(&sub.assemble_augmented().unwrap().operator);
    assert_eq!((&k - k.transpose()).amax(), 0.0);
}
