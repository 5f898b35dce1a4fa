//! Lorenz-96 integrated with classical RK4.
//!
//! The tangent-linear and adjoint codes differentiate the discrete RK4 scheme
//! itself, so the adjoint identity holds to rounding error and the Taylor
//! remainder of the discrete step is exactly second order.

use super::{ensure_finite, DynamicalModel};
use crate::error::{check_dim, Error, Result};
use crate::operators::{LinearOperator, Operator, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct Lorenz96 {
    n: usize,
    forcing: f64,
    dt: f64,
    substeps: usize,
}

/// Stage inputs of one RK4 substep.
type Stages = [Vector; 4];

impl Lorenz96 {
    pub fn new(n: usize, forcing: f64, dt: f64, substeps: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidParameter(format!(
                "Lorenz-96 needs at least 4 variables, got {n}"
            )));
        }
        if !(dt > 0.0) || !dt.is_finite() || substeps == 0 || !forcing.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "invalid Lorenz-96 integration settings: dt={dt}, substeps={substeps}, forcing={forcing}"
            )));
        }
        Ok(Lorenz96 {
            n,
            forcing,
            dt,
            substeps,
        })
    }

    /// Forcing 8, `dt = 0.05`, one substep per window.
    pub fn standard(n: usize) -> Result<Self> {
        Self::new(n, 8.0, 0.05, 1)
    }

    pub fn forcing(&self) -> f64 {
        self.forcing
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    #[inline]
    fn idx(&self, k: usize, offset: isize) -> usize {
        (k as isize + offset).rem_euclid(self.n as isize) as usize
    }

    /// Right-hand side `dx_k/dt = (x_{k+1} - x_{k-2}) x_{k-1} - x_k + F`.
    pub fn tendency(&self, x: &Vector) -> Vector {
        Vector::from_fn(self.n, |k, _| {
            (x[self.idx(k, 1)] - x[self.idx(k, -2)]) * x[self.idx(k, -1)] - x[k] + self.forcing
        })
    }

    fn tendency_tangent(&self, x: &Vector, dx: &Vector) -> Vector {
        Vector::from_fn(self.n, |k, _| {
            let (kp1, km1, km2) = (self.idx(k, 1), self.idx(k, -1), self.idx(k, -2));
            (dx[kp1] - dx[km2]) * x[km1] + (x[kp1] - x[km2]) * dx[km1] - dx[k]
        })
    }

    fn tendency_adjoint(&self, x: &Vector, w: &Vector) -> Vector {
        let mut out = Vector::zeros(self.n);
        for k in 0..self.n {
            let (kp1, km1, km2) = (self.idx(k, 1), self.idx(k, -1), self.idx(k, -2));
            out[kp1] += w[k] * x[km1];
            out[km2] -= w[k] * x[km1];
            out[km1] += w[k] * (x[kp1] - x[km2]);
            out[k] -= w[k];
        }
        out
    }

    fn rk4_substep(&self, x: &Vector) -> (Vector, Stages) {
        let h = self.dt;
        let k1 = self.tendency(x);
        let s2 = x + &k1 * (0.5 * h);
        let k2 = self.tendency(&s2);
        let s3 = x + &k2 * (0.5 * h);
        let k3 = self.tendency(&s3);
        let s4 = x + &k3 * h;
        let k4 = self.tendency(&s4);
        let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        (next, [x.clone(), s2, s3, s4])
    }

    /// Integrates one window, recording the RK4 stage inputs of every substep.
    fn integrate(&self, x: &Vector) -> Result<(Vector, Vec<Stages>)> {
        check_dim("Lorenz-96 state", self.n, x.len())?;
        ensure_finite(x, "Lorenz-96 input")?;
        let mut state = x.clone();
        let mut stages = Vec::with_capacity(self.substeps);
        for _ in 0..self.substeps {
            let (next, st) = self.rk4_substep(&state);
            stages.push(st);
            state = next;
        }
        ensure_finite(&state, "Lorenz-96 step")?;
        Ok((state, stages))
    }

    fn tangent_through(&self, stages: &[Stages], dx: &Vector) -> Vector {
        let h = self.dt;
        let mut d = dx.clone();
        for [s1, s2, s3, s4] in stages {
            let dk1 = self.tendency_tangent(s1, &d);
            let dk2 = self.tendency_tangent(s2, &(&d + &dk1 * (0.5 * h)));
            let dk3 = self.tendency_tangent(s3, &(&d + &dk2 * (0.5 * h)));
            let dk4 = self.tendency_tangent(s4, &(&d + &dk3 * h));
            d += (dk1 + dk2 * 2.0 + dk3 * 2.0 + dk4) * (h / 6.0);
        }
        d
    }

    fn adjoint_through(&self, stages: &[Stages], w: &Vector) -> Vector {
        let h = self.dt;
        let mut a = w.clone();
        for [s1, s2, s3, s4] in stages.iter().rev() {
            let mut ak1 = &a * (h / 6.0);
            let mut ak2 = &a * (h / 3.0);
            let mut ak3 = &a * (h / 3.0);
            let ak4 = &a * (h / 6.0);
            let ay4 = self.tendency_adjoint(s4, &ak4);
            ak3 += &ay4 * h;
            a += ay4;
            let ay3 = self.tendency_adjoint(s3, &ak3);
            ak2 += &ay3 * (0.5 * h);
            a += ay3;
            let ay2 = self.tendency_adjoint(s2, &ak2);
            ak1 += &ay2 * (0.5 * h);
            a += ay2;
            a += self.tendency_adjoint(s1, &ak1);
        }
        a
    }
}

impl DynamicalModel for Lorenz96 {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn step(&self, x: &Vector) -> Result<Vector> {
        Ok(self.integrate(x)?.0)
    }

    fn tlm_apply(&self, x_ref: &Vector, dx: &Vector) -> Result<Vector> {
        check_dim("Lorenz-96 perturbation", self.n, dx.len())?;
        let (_, stages) = self.integrate(x_ref)?;
        Ok(self.tangent_through(&stages, dx))
    }

    fn adjoint_apply(&self, x_ref: &Vector, w: &Vector) -> Result<Vector> {
        check_dim("Lorenz-96 adjoint input", self.n, w.len())?;
        let (_, stages) = self.integrate(x_ref)?;
        Ok(self.adjoint_through(&stages, w))
    }

    fn name(&self) -> &str {
        "lorenz96"
    }

    fn linearize(&self, x_ref: &Vector) -> Result<Operator> {
        let (_, stages) = self.integrate(x_ref)?;
        Ok(Operator::new(Lorenz96Tangent {
            model: self.clone(),
            stages,
        }))
    }
}

/// Jacobian of one Lorenz-96 window frozen at a reference state.
struct Lorenz96Tangent {
    model: Lorenz96,
    stages: Vec<Stages>,
}

impl LinearOperator for Lorenz96Tangent {
    fn domain_dim(&self) -> usize {
        self.model.n
    }
    fn codomain_dim(&self) -> usize {
        self.model.n
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        self.model.tangent_through(&self.stages, v)
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        Some(self.model.adjoint_through(&self.stages, w))
    }
    fn label(&self) -> &str {
        "lorenz96-tlm"
    }
}
