//! Tangent-linear and adjoint verification.

use super::{DynamicalModel, ObservationOperator};
use crate::error::{Error, Result};
use crate::operators::{LinearOperator, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// `1e-1` down to `1e-6` in decades.
pub const DEFAULT_EPSILONS: [f64; 6] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

/// Remainders below this multiple of `eps_mach * (1 + |f(x)|)` are treated as noise.
const NOISE_FACTOR: f64 = 100.0;

#[derive(Debug, Clone)]
pub struct TaylorReport {
    pub epsilons: Vec<f64>,
    /// `|f(x + e d) - f(x) - e J d|` for each epsilon.
    pub remainders: Vec<f64>,
    /// Whether each remainder sits above the noise floor.
    pub above_floor: Vec<bool>,
    /// Least-squares slope of log remainder against log epsilon.
    pub slope: Option<f64>,
    /// Every remainder fell below the noise floor.
    pub exact: bool,
}

impl TaylorReport {
    pub fn passes(&self) -> bool {
        self.exact || self.slope.is_some_and(|s| (1.9..=2.1).contains(&s))
    }
}

fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Taylor test of `f` against its claimed Jacobian action `jd = J(x) d`.
///
/// The slope is fitted over the epsilons strictly between the largest and
/// smallest one whose remainder clears the noise floor. With fewer than two
/// such interior points every usable point is fitted.
pub fn taylor_test(
    f: &dyn Fn(&Vector) -> Result<Vector>,
    x: &Vector,
    direction: &Vector,
    jd: &Vector,
    epsilons: &[f64],
) -> Result<TaylorReport> {
    let fx = f(x)?;
    let floor = NOISE_FACTOR * f64::EPSILON * (1.0 + fx.norm());
    let mut remainders = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let fp = f(&(x + direction * eps))?;
        remainders.push((fp - &fx - jd * eps).norm());
    }
    let above_floor: Vec<bool> = remainders.iter().map(|&r| r > floor).collect();
    let usable: Vec<(f64, f64)> = epsilons
        .iter()
        .zip(&remainders)
        .zip(&above_floor)
        .filter(|(_, &ok)| ok)
        .map(|((&e, &r), _)| (e.ln(), r.ln()))
        .collect();
    let exact = usable.is_empty();
    let interior = if usable.len() >= 4 {
        &usable[1..usable.len() - 1]
    } else {
        &usable[..]
    };
    Ok(TaylorReport {
        epsilons: epsilons.to_vec(),
        remainders,
        above_floor,
        slope: least_squares_slope(interior),
        exact,
    })
}

pub fn taylor_test_model(
    model: &dyn DynamicalModel,
    x: &Vector,
    direction: &Vector,
    epsilons: &[f64],
) -> Result<TaylorReport> {
    let jd = model.tlm_apply(x, direction)?;
    taylor_test(&|v| model.step(v), x, direction, &jd, epsilons)
}

pub fn taylor_test_observation(
    obs: &dyn ObservationOperator,
    x: &Vector,
    direction: &Vector,
    epsilons: &[f64],
) -> Result<TaylorReport> {
    let jd = obs.jacobian_apply(x, direction)?;
    taylor_test(&|v| obs.observe(v), x, direction, &jd, epsilons)
}

/// Worst relative mismatch of `<A v, w> = <v, A^T w>` over random Gaussian pairs.
///
/// The mismatch is scaled by `|A v| |w| + |v| |A^T w|`.
pub fn adjoint_test(op: &dyn LinearOperator, trials: usize, seed: u64) -> Result<f64> {
    if !op.has_adjoint() {
        return Err(Error::NoAdjoint(op.label().to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let v = draw(op.domain_dim());
        let w = draw(op.codomain_dim());
        let av = op.apply(&v)?;
        let atw = op.apply_adjoint(&w)?;
        let scale = av.norm() * w.norm() + v.norm() * atw.norm();
        if scale > 0.0 {
            worst = worst.max((av.dot(&w) - v.dot(&atw)).abs() / scale);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Lorenz96;
    use crate::operators::Operator;

    #[test]
    fn quadratic_function_slope() {
        let f = |v: &Vector| Ok(v.map(|t| t * t));
        let x = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        let d = Vector::from_vec(vec![0.3, 0.1, -1.0]);
        let jd = x.component_mul(&d) * 2.0;
        let r = taylor_test(&f, &x, &d, &jd, &DEFAULT_EPSILONS).unwrap();
        assert!((r.slope.unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn halving_epsilon_quarters_remainder() {
        let m = Lorenz96::standard(40).unwrap();
        let x = Vector::from_fn(40, |i, _| 8.0 + ((i * 7) % 5) as f64 - 2.0);
        let d = Vector::from_fn(40, |i, _| ((i * 3) % 7) as f64 / 7.0 - 0.5);
        let eps = [1e-3, 5e-4, 2.5e-4, 1.25e-4];
        let r = taylor_test_model(&m, &x, &d, &eps).unwrap();
        for pair in r.remainders.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!((ratio - 4.0).abs() <= 0.2, "ratio {ratio}");
        }
    }

    struct ScaledTlm(Lorenz96, f64);

    impl DynamicalModel for ScaledTlm {
        fn state_dim(&self) -> usize {
            self.0.state_dim()
        }
        fn step(&self, x: &Vector) -> Result<Vector> {
            self.0.step(x)
        }
        fn tlm_apply(&self, x: &Vector, dx: &Vector) -> Result<Vector> {
            Ok(self.0.tlm_apply(x, dx)? * self.1)
        }
        fn adjoint_apply(&self, x: &Vector, w: &Vector) -> Result<Vector> {
            Ok(self.0.adjoint_apply(x, w)? * self.1)
        }
        fn name(&self) -> &str {
            "scaled"
        }
        fn linearize(&self, x: &Vector) -> Result<Operator> {
            Ok(self.0.linearize(x)?.scale(self.1))
        }
    }

    #[test]
    fn broken_tlm_is_detected() {
        let m = ScaledTlm(Lorenz96::standard(40).unwrap(), 1.01);
        let x = Vector::from_fn(40, |i, _| 8.0 + (i as f64 * 0.37).sin());
        let d = Vector::from_fn(40, |i, _| (i as f64 * 1.3).cos());
        let r = taylor_test_model(&m, &x, &d, &DEFAULT_EPSILONS).unwrap();
        let slope = r.slope.unwrap();
        assert!(!r.passes());
        assert!((slope - 1.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn adjoint_test_requires_adjoint() {
        let op = Operator::from_fn(2, 2, |v| v.clone(), None::<fn(&Vector) -> Vector>);
        assert!(matches!(adjoint_test(&op, 1, 0), Err(Error::NoAdjoint(_))));
    }
}
