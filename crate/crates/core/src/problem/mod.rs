//! 4DVar costs, gradients, Gauss–Newton linearization and linear-system assembly.
//!
//! A trajectory `x = (x_0, .., x_N)` is stored time-major as one stacked vector.
//! Strong-constraint problems are controlled by `x_0` alone.

mod assembly;
mod inner;

use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::models::{ensure_finite, propagate, DynamicalModel, ObservationOperator};
use crate::operators::{split_blocks, stack_blocks, SpdOperator, Vector};

pub use assembly::{AssemblySystem, Recovery, SystemForm};
pub use inner::InnerSubproblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    Strong,
    Weak,
}

/// Observations `y_i` at time `t_i` with their operator and error covariance.
#[derive(Clone)]
pub struct ObservationWindow {
    pub y: Vector,
    pub operator: Arc<dyn ObservationOperator>,
    pub r: Arc<dyn SpdOperator>,
}

impl ObservationWindow {
    pub fn new(
        y: Vector,
        operator: Arc<dyn ObservationOperator>,
        r: Arc<dyn SpdOperator>,
    ) -> Result<Self> {
        check_dim("observation vector", operator.output_dim(), y.len())?;
        check_dim("observation covariance", operator.output_dim(), r.dim())?;
        Ok(ObservationWindow { y, operator, r })
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }
}

#[derive(Clone)]
pub struct AssimilationSetup {
    formulation: Formulation,
    background: Vector,
    b: Arc<dyn SpdOperator>,
    windows: Vec<ObservationWindow>,
    model_error: Vec<Arc<dyn SpdOperator>>,
    model: Arc<dyn DynamicalModel>,
}

impl AssimilationSetup {
    /// `windows[i]` holds the observations at `t_i`, `i = 0..=N`.
    pub fn strong(
        model: Arc<dyn DynamicalModel>,
        background: Vector,
        b: Arc<dyn SpdOperator>,
        windows: Vec<ObservationWindow>,
    ) -> Result<Self> {
        Self::build(Formulation::Strong, model, background, b, windows, Vec::new())
    }

    /// `model_error[i-1]` is `Q_i`, `i = 1..=N`.
    pub fn weak(
        model: Arc<dyn DynamicalModel>,
        background: Vector,
        b: Arc<dyn SpdOperator>,
        windows: Vec<ObservationWindow>,
        model_error: Vec<Arc<dyn SpdOperator>>,
    ) -> Result<Self> {
        Self::build(Formulation::Weak, model, background, b, windows, model_error)
    }

    fn build(
        formulation: Formulation,
        model: Arc<dyn DynamicalModel>,
        background: Vector,
        b: Arc<dyn SpdOperator>,
        windows: Vec<ObservationWindow>,
        model_error: Vec<Arc<dyn SpdOperator>>,
    ) -> Result<Self> {
        let n = model.state_dim();
        check_dim("background state", n, background.len())?;
        check_dim("background covariance", n, b.dim())?;
        if windows.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one observation time is required".into(),
            ));
        }
        for (i, w) in windows.iter().enumerate() {
            check_dim(&format!("observation operator {i} input"), n, w.operator.input_dim())?;
            if w.dim() > n {
                return Err(Error::InvalidParameter(format!(
                    "window {i} has {} observations for state dimension {n}",
                    w.dim()
                )));
            }
        }
        if formulation == Formulation::Weak {
            check_dim("model-error covariance count", windows.len() - 1, model_error.len())?;
            for (i, q) in model_error.iter().enumerate() {
                check_dim(&format!("Q_{}", i + 1), n, q.dim())?;
            }
        }
        Ok(AssimilationSetup {
            formulation,
            background,
            b,
            windows,
            model_error,
            model,
        })
    }

    pub fn formulation(&self) -> Formulation {
        self.formulation
    }
    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }
    /// Number of model steps `N`.
    pub fn num_windows(&self) -> usize {
        self.windows.len() - 1
    }
    pub fn background(&self) -> &Vector {
        &self.background
    }
    pub fn b(&self) -> &Arc<dyn SpdOperator> {
        &self.b
    }
    pub fn windows(&self) -> &[ObservationWindow] {
        &self.windows
    }
    pub fn model_error(&self) -> &[Arc<dyn SpdOperator>] {
        &self.model_error
    }
    pub fn model(&self) -> &Arc<dyn DynamicalModel> {
        &self.model
    }
    pub fn obs_dims(&self) -> Vec<usize> {
        self.windows.iter().map(|w| w.dim()).collect()
    }
    pub fn total_obs(&self) -> usize {
        self.windows.iter().map(|w| w.dim()).sum()
    }

    /// Length of the control vector: `n` (strong) or `n (N+1)` (weak).
    pub fn control_dim(&self) -> usize {
        match self.formulation {
            Formulation::Strong => self.state_dim(),
            Formulation::Weak => self.state_dim() * self.windows.len(),
        }
    }

    fn require_weak(&self, what: &str) -> Result<()> {
        if self.formulation != Formulation::Weak {
            return Err(Error::IncompatibleFormulation(format!(
                "{what} needs a weak-constraint setup"
            )));
        }
        Ok(())
    }

    /// Splits a stacked trajectory into its `N+1` states.
    pub fn split_trajectory(&self, x: &Vector) -> Result<Vec<Vector>> {
        let n = self.state_dim();
        check_dim("stacked trajectory", n * self.windows.len(), x.len())?;
        Ok(split_blocks(x, &vec![n; self.windows.len()]))
    }

    /// Model-consistent trajectory from `x0`, stacked.
    pub fn trajectory_from(&self, x0: &Vector) -> Result<Vector> {
        check_dim("initial state", self.state_dim(), x0.len())?;
        Ok(stack_blocks(&propagate(
            self.model.as_ref(),
            x0,
            self.num_windows(),
        )?))
    }

    fn observation_residuals(&self, states: &[Vector]) -> Result<Vec<Vector>> {
        self.windows
            .iter()
            .zip(states)
            .map(|(w, x)| {
                let hx = w.operator.observe(x)?;
                ensure_finite(&hx, w.operator.name())?;
                Ok(hx - &w.y)
            })
            .collect()
    }

    fn observation_term(&self, residuals: &[Vector]) -> f64 {
        self.windows
            .iter()
            .zip(residuals)
            .map(|(w, r)| 0.5 * w.r.inverse_norm_sq(r))
            .sum()
    }

    fn finite_cost(value: f64) -> Result<f64> {
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Divergence("cost evaluated to a non-finite value".into()))
        }
    }

    /// Strong-constraint cost of the initial state `x0`.
    pub fn cost_strong(&self, x0: &Vector) -> Result<f64> {
        check_dim("initial state", self.state_dim(), x0.len())?;
        let states = propagate(self.model.as_ref(), x0, self.num_windows())?;
        let residuals = self.observation_residuals(&states)?;
        let background = 0.5 * self.b.inverse_norm_sq(&(x0 - &self.background));
        Self::finite_cost(background + self.observation_term(&residuals))
    }

    /// Weak-constraint cost of a stacked trajectory.
    pub fn cost_weak(&self, x: &Vector) -> Result<f64> {
        self.require_weak("the weak-constraint cost")?;
        let states = self.split_trajectory(x)?;
        let residuals = self.observation_residuals(&states)?;
        let mut total = 0.5 * self.b.inverse_norm_sq(&(&states[0] - &self.background));
        total += self.observation_term(&residuals);
        for (i, q) in self.model_error.iter().enumerate() {
            let mx = self.model.step(&states[i])?;
            total += 0.5 * q.inverse_norm_sq(&(&states[i + 1] - mx));
        }
        Self::finite_cost(total)
    }

    /// Cost in this setup's own control space.
    pub fn cost(&self, x: &Vector) -> Result<f64> {
        match self.formulation {
            Formulation::Strong => self.cost_strong(x),
            Formulation::Weak => self.cost_weak(x),
        }
    }

    /// Gradient of [`cost_strong`](Self::cost_strong) by one adjoint sweep.
    pub fn gradient_strong(&self, x0: &Vector) -> Result<Vector> {
        check_dim("initial state", self.state_dim(), x0.len())?;
        let states = propagate(self.model.as_ref(), x0, self.num_windows())?;
        let residuals = self.observation_residuals(&states)?;
        let forcing = |i: usize| -> Result<Vector> {
            let w = &self.windows[i];
            w.operator
                .adjoint_apply(&states[i], &w.r.inverse_apply(&residuals[i]))
        };
        let big_n = self.num_windows();
        let mut lambda = forcing(big_n)?;
        for i in (0..big_n).rev() {
            lambda = self.model.adjoint_apply(&states[i], &lambda)? + forcing(i)?;
        }
        let grad = lambda + self.b.inverse_apply(&(x0 - &self.background));
        ensure_finite(&grad, "strong gradient")?;
        Ok(grad)
    }

    /// Gradient of [`cost_weak`](Self::cost_weak) with respect to every state.
    pub fn gradient_weak(&self, x: &Vector) -> Result<Vector> {
        self.require_weak("the weak-constraint gradient")?;
        let states = self.split_trajectory(x)?;
        let residuals = self.observation_residuals(&states)?;
        let mut grad: Vec<Vector> = Vec::with_capacity(states.len());
        for (i, w) in self.windows.iter().enumerate() {
            grad.push(
                w.operator
                    .adjoint_apply(&states[i], &w.r.inverse_apply(&residuals[i]))?,
            );
        }
        grad[0] += self.b.inverse_apply(&(&states[0] - &self.background));
        for (i, q) in self.model_error.iter().enumerate() {
            let misfit = &states[i + 1] - self.model.step(&states[i])?;
            let weighted = q.inverse_apply(&misfit);
            grad[i] -= self.model.adjoint_apply(&states[i], &weighted)?;
            grad[i + 1] += weighted;
        }
        let grad = stack_blocks(&grad);
        ensure_finite(&grad, "weak gradient")?;
        Ok(grad)
    }

    pub fn gradient(&self, x: &Vector) -> Result<Vector> {
        match self.formulation {
            Formulation::Strong => self.gradient_strong(x),
            Formulation::Weak => self.gradient_weak(x),
        }
    }

    /// Gauss–Newton linearization at the control `x` (`x_0` or a stacked trajectory).
    pub fn linearize(&self, x: &Vector) -> Result<InnerSubproblem> {
        InnerSubproblem::build(self, x)
    }
}

#[cfg(test)]
mod tests;
