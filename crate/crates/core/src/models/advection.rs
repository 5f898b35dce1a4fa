//! Periodic linear advection: a circular index shift per window.

use super::DynamicalModel;
use crate::error::{check_dim, Error, Result};
use crate::operators::{Operator, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearAdvection {
    n: usize,
    shift: usize,
}

impl LinearAdvection {
    /// Shift by one grid point per window.
    pub fn new(n: usize) -> Result<Self> {
        Self::with_shift(n, 1)
    }

    pub fn with_shift(n: usize, shift: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "advection grid must be non-empty".into(),
            ));
        }
        Ok(LinearAdvection {
            n,
            shift: shift % n,
        })
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    fn forward(n: usize, shift: usize, v: &Vector) -> Vector {
        Vector::from_fn(n, |k, _| v[(k + n - shift) % n])
    }

    fn backward(n: usize, shift: usize, v: &Vector) -> Vector {
        Vector::from_fn(n, |k, _| v[(k + shift) % n])
    }
}

impl DynamicalModel for LinearAdvection {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn step(&self, x: &Vector) -> Result<Vector> {
        check_dim("advection state", self.n, x.len())?;
        super::ensure_finite(x, "advection input")?;
        Ok(Self::forward(self.n, self.shift, x))
    }

    fn tlm_apply(&self, _x_ref: &Vector, dx: &Vector) -> Result<Vector> {
        check_dim("advection perturbation", self.n, dx.len())?;
        Ok(Self::forward(self.n, self.shift, dx))
    }

    fn adjoint_apply(&self, _x_ref: &Vector, w: &Vector) -> Result<Vector> {
        check_dim("advection adjoint input", self.n, w.len())?;
        Ok(Self::backward(self.n, self.shift, w))
    }

    fn name(&self) -> &str {
        "linear-advection"
    }

    fn linearize(&self, _x_ref: &Vector) -> Result<Operator> {
        let (n, s) = (self.n, self.shift);
        Ok(Operator::from_fn(
            n,
            n,
            move |v| Self::forward(n, s, v),
            Some(move |w: &Vector| Self::backward(n, s, w)),
        )
        .with_label("advection"))
    }
}
