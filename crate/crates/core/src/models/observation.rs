//! Point observation operators.

use super::ObservationOperator;
use crate::error::{check_dim, Error, Result};
use crate::operators::{Operator, Vector};

fn validate_indices(n: usize, indices: &[usize]) -> Result<()> {
    if indices.len() > n {
        return Err(Error::InvalidParameter(format!(
            "{} observations exceed state dimension {n}",
            indices.len()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidParameter(format!(
            "observation index {bad} out of range for state dimension {n}"
        )));
    }
    Ok(())
}

fn gather(indices: &[usize], v: &Vector) -> Vector {
    Vector::from_iterator(indices.len(), indices.iter().map(|&i| v[i]))
}

fn scatter(n: usize, indices: &[usize], w: &Vector) -> Vector {
    let mut out = Vector::zeros(n);
    for (k, &i) in indices.iter().enumerate() {
        out[i] += w[k];
    }
    out
}

/// Observes the state at fixed grid indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSelection {
    n: usize,
    indices: Vec<usize>,
}

impl PointSelection {
    pub fn new(n: usize, indices: Vec<usize>) -> Result<Self> {
        validate_indices(n, &indices)?;
        Ok(PointSelection { n, indices })
    }

    /// Every `stride`-th grid point starting at `offset`.
    pub fn strided(n: usize, stride: usize, offset: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidParameter("stride must be positive".into()));
        }
        Self::new(n, (offset..n).step_by(stride).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

impl ObservationOperator for PointSelection {
    fn input_dim(&self) -> usize {
        self.n
    }
    fn output_dim(&self) -> usize {
        self.indices.len()
    }
    fn observe(&self, x: &Vector) -> Result<Vector> {
        check_dim("selection input", self.n, x.len())?;
        Ok(gather(&self.indices, x))
    }
    fn jacobian_apply(&self, _x_ref: &Vector, dx: &Vector) -> Result<Vector> {
        self.observe(dx)
    }
    fn adjoint_apply(&self, _x_ref: &Vector, w: &Vector) -> Result<Vector> {
        check_dim("selection adjoint input", self.indices.len(), w.len())?;
        Ok(scatter(self.n, &self.indices, w))
    }
    fn name(&self) -> &str {
        "point-selection"
    }
    fn linearize(&self, _x_ref: &Vector) -> Result<Operator> {
        let n = self.n;
        let fwd = self.indices.clone();
        let adj = self.indices.clone();
        Ok(Operator::from_fn(
            self.indices.len(),
            n,
            move |v| gather(&fwd, v),
            Some(move |w: &Vector| scatter(n, &adj, w)),
        )
        .with_label("selection"))
    }
}

/// Observes squared state values at fixed grid indices.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPoint {
    n: usize,
    indices: Vec<usize>,
}

impl QuadraticPoint {
    pub fn new(n: usize, indices: Vec<usize>) -> Result<Self> {
        validate_indices(n, &indices)?;
        Ok(QuadraticPoint { n, indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    fn slopes(&self, x_ref: &Vector) -> Vector {
        gather(&self.indices, x_ref) * 2.0
    }
}

impl ObservationOperator for QuadraticPoint {
    fn input_dim(&self) -> usize {
        self.n
    }
    fn output_dim(&self) -> usize {
        self.indices.len()
    }
    fn observe(&self, x: &Vector) -> Result<Vector> {
        check_dim("quadratic observation input", self.n, x.len())?;
        Ok(gather(&self.indices, x).map(|v| v * v))
    }
    fn jacobian_apply(&self, x_ref: &Vector, dx: &Vector) -> Result<Vector> {
        check_dim("quadratic observation reference", self.n, x_ref.len())?;
        check_dim("quadratic observation perturbation", self.n, dx.len())?;
        Ok(self.slopes(x_ref).component_mul(&gather(&self.indices, dx)))
    }
    fn adjoint_apply(&self, x_ref: &Vector, w: &Vector) -> Result<Vector> {
        check_dim("quadratic observation reference", self.n, x_ref.len())?;
        check_dim("quadratic observation adjoint input", self.indices.len(), w.len())?;
        Ok(scatter(self.n, &self.indices, &self.slopes(x_ref).component_mul(w)))
    }
    fn name(&self) -> &str {
        "quadratic-point"
    }
    fn linearize(&self, x_ref: &Vector) -> Result<Operator> {
        check_dim("quadratic observation reference", self.n, x_ref.len())?;
        let n = self.n;
        let slopes = self.slopes(x_ref);
        let slopes_t = slopes.clone();
        let fwd = self.indices.clone();
        let adj = self.indices.clone();
        Ok(Operator::from_fn(
            self.indices.len(),
            n,
            move |v| slopes.component_mul(&gather(&fwd, v)),
            Some(move |w: &Vector| scatter(n, &adj, &slopes_t.component_mul(w))),
        )
        .with_label("quadratic-point"))
    }
}
