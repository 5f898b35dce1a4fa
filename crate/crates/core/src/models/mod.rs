//! Toy dynamics and observation operators with tangent-linear and adjoint code.

mod advection;
mod lorenz96;
mod matrix;
mod observation;
mod taylor;

use crate::error::{Error, Result};
use crate::operators::{Operator, Vector};

pub use advection::LinearAdvection;
pub use lorenz96::Lorenz96;
pub use matrix::{MatrixModel, MatrixObservation};
pub use observation::{PointSelection, QuadraticPoint};
pub use taylor::{
    adjoint_test, taylor_test, taylor_test_model, taylor_test_observation, TaylorReport,
    DEFAULT_EPSILONS,
};

/// A discrete model step `x_i = M_i(x_{i-1})` with its Jacobian and adjoint.
pub trait DynamicalModel: Send + Sync {
    fn state_dim(&self) -> usize;

    /// One window advance from `t_{i-1}` to `t_i`.
    fn step(&self, x: &Vector) -> Result<Vector>;

    /// Jacobian of [`step`](Self::step) at `x_ref`, applied to `dx`.
    fn tlm_apply(&self, x_ref: &Vector, dx: &Vector) -> Result<Vector>;

    /// Transpose of the Jacobian at `x_ref`, applied to `w`.
    fn adjoint_apply(&self, x_ref: &Vector, w: &Vector) -> Result<Vector>;

    fn name(&self) -> &str;

    /// Freezes the Jacobian at `x_ref` as an operator with adjoint.
    fn linearize(&self, x_ref: &Vector) -> Result<Operator>;
}

/// An observation map `y = H(x)` with its Jacobian and adjoint.
pub trait ObservationOperator: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn observe(&self, x: &Vector) -> Result<Vector>;
    fn jacobian_apply(&self, x_ref: &Vector, dx: &Vector) -> Result<Vector>;
    fn adjoint_apply(&self, x_ref: &Vector, w: &Vector) -> Result<Vector>;
    fn name(&self) -> &str;

    /// Freezes the Jacobian at `x_ref`.
    fn linearize(&self, x_ref: &Vector) -> Result<Operator>;
}

/// Propagates `x0` through `windows` model steps, returning `x_0..x_N`.
pub fn propagate(model: &dyn DynamicalModel, x0: &Vector, windows: usize) -> Result<Vec<Vector>> {
    let mut traj = Vec::with_capacity(windows + 1);
    traj.push(x0.clone());
    for _ in 0..windows {
        let next = model.step(traj.last().unwrap())?;
        traj.push(next);
    }
    Ok(traj)
}

pub(crate) fn ensure_finite(v: &Vector, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence(format!("{what} produced a non-finite value")))
    }
}
