//! Linear model and observation operator given by explicit matrices.

use super::{DynamicalModel, ObservationOperator};
use crate::error::{check_dim, Result};
use crate::operators::{Matrix, Operator, Vector};

#[derive(Debug, Clone)]
pub struct MatrixModel {
    m: Matrix,
}

impl MatrixModel {
    pub fn new(m: Matrix) -> Result<Self> {
        check_dim("square model matrix", m.nrows(), m.ncols())?;
        Ok(MatrixModel { m })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.m
    }
}

impl DynamicalModel for MatrixModel {
    fn state_dim(&self) -> usize {
        self.m.nrows()
    }

    fn step(&self, x: &Vector) -> Result<Vector> {
        check_dim("matrix model state", self.m.ncols(), x.len())?;
        let out = &self.m * x;
        super::ensure_finite(&out, "matrix model")?;
        Ok(out)
    }

    fn tlm_apply(&self, _x_ref: &Vector, dx: &Vector) -> Result<Vector> {
        check_dim("matrix model perturbation", self.m.ncols(), dx.len())?;
        Ok(&self.m * dx)
    }

    fn adjoint_apply(&self, _x_ref: &Vector, w: &Vector) -> Result<Vector> {
        check_dim("matrix model adjoint input", self.m.nrows(), w.len())?;
        Ok(self.m.tr_mul(w))
    }

    fn name(&self) -> &str {
        "matrix-model"
    }

    fn linearize(&self, _x_ref: &Vector) -> Result<Operator> {
        Ok(Operator::dense(self.m.clone()))
    }
}

#[derive(Debug, Clone)]
pub struct MatrixObservation {
    h: Matrix,
}

impl MatrixObservation {
    pub fn new(h: Matrix) -> Self {
        MatrixObservation { h }
    }
}

impl ObservationOperator for MatrixObservation {
    fn input_dim(&self) -> usize {
        self.h.ncols()
    }
    fn output_dim(&self) -> usize {
        self.h.nrows()
    }
    fn observe(&self, x: &Vector) -> Result<Vector> {
        check_dim("matrix observation input", self.h.ncols(), x.len())?;
        Ok(&self.h * x)
    }
    fn jacobian_apply(&self, _x_ref: &Vector, dx: &Vector) -> Result<Vector> {
        self.observe(dx)
    }
    fn adjoint_apply(&self, _x_ref: &Vector, w: &Vector) -> Result<Vector> {
        check_dim("matrix observation adjoint input", self.h.nrows(), w.len())?;
        Ok(self.h.tr_mul(w))
    }
    fn name(&self) -> &str {
        "matrix-observation"
    }
    fn linearize(&self, _x_ref: &Vector) -> Result<Operator> {
        Ok(Operator::dense(self.h.clone()))
    }
}
