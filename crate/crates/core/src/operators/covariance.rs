//! Symmetric positive definite operators with inverse and square-root factor actions.
//!
//! Covariance matrices (B, R_i, Q_i and their block-diagonal stacks R and D)
//! are exposed through [`SpdOperator`]: besides `C v` they provide `C⁻¹ v`, a
//! factor `U v` with `C = U Uᵀ`, and the transposed/inverted factor actions
//! needed by control-variable transforms and PSAS.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::SymmetricEigen;

use super::{LinearOperator, Matrix, Operator, Vector};
use crate::error::{Error, Result};

/// Dense square roots are built by eigendecomposition up to this size.
pub const DENSE_FACTOR_CAP: usize = 2000;

/// Relative eigenvalue floor applied to kernel-based correlation matrices.
pub const EIGENVALUE_FLOOR: f64 = 1e-10;

pub trait SpdOperator: LinearOperator {
    /// `C⁻¹ v`
    fn inverse_apply(&self, v: &Vector) -> Vector;
    /// `U v` with `C = U Uᵀ`
    fn factor_apply(&self, v: &Vector) -> Vector;
    /// `Uᵀ v`
    fn factor_transpose_apply(&self, v: &Vector) -> Vector;
    /// `U⁻¹ v`
    fn factor_inverse_apply(&self, v: &Vector) -> Vector;
    /// `U⁻ᵀ v`
    fn factor_inverse_transpose_apply(&self, v: &Vector) -> Vector;

    fn dim(&self) -> usize {
        self.domain_dim()
    }

    /// `vᵀ C⁻¹ v`
    fn inverse_norm_sq(&self, v: &Vector) -> f64 {
        v.dot(&self.inverse_apply(v))
    }
}

/// Which action of an [`SpdOperator`] a [`SpdView`] exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpdAction {
    Apply,
    Inverse,
    Factor,
    FactorTranspose,
    FactorInverse,
    FactorInverseTranspose,
}

impl SpdAction {
    fn adjoint(self) -> SpdAction {
        match self {
            SpdAction::Apply => SpdAction::Apply,
            SpdAction::Inverse => SpdAction::Inverse,
            SpdAction::Factor => SpdAction::FactorTranspose,
            SpdAction::FactorTranspose => SpdAction::Factor,
            SpdAction::FactorInverse => SpdAction::FactorInverseTranspose,
            SpdAction::FactorInverseTranspose => SpdAction::FactorInverse,
        }
    }
}

/// Exposes one action of an SPD operator as a plain [`Operator`].
pub struct SpdView {
    inner: Arc<dyn SpdOperator>,
    action: SpdAction,
}

impl SpdView {
    pub fn operator(inner: &Arc<dyn SpdOperator>, action: SpdAction) -> Operator {
        Operator::new(SpdView {
            inner: inner.clone(),
            action,
        })
    }
}

fn run_action(op: &dyn SpdOperator, action: SpdAction, v: &Vector) -> Vector {
    match action {
        SpdAction::Apply => op.apply_unchecked(v),
        SpdAction::Inverse => op.inverse_apply(v),
        SpdAction::Factor => op.factor_apply(v),
        SpdAction::FactorTranspose => op.factor_transpose_apply(v),
        SpdAction::FactorInverse => op.factor_inverse_apply(v),
        SpdAction::FactorInverseTranspose => op.factor_inverse_transpose_apply(v),
    }
}

impl LinearOperator for SpdView {
    fn domain_dim(&self) -> usize {
        self.inner.dim()
    }
    fn codomain_dim(&self) -> usize {
        self.inner.dim()
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        run_action(self.inner.as_ref(), self.action, v)
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        Some(run_action(self.inner.as_ref(), self.action.adjoint(), w))
    }
    fn label(&self) -> &str {
        match self.action {
            SpdAction::Apply => "spd",
            SpdAction::Inverse => "spd-inverse",
            SpdAction::Factor => "spd-factor",
            SpdAction::FactorTranspose => "spd-factor-transpose",
            SpdAction::FactorInverse => "spd-factor-inverse",
            SpdAction::FactorInverseTranspose => "spd-factor-inverse-transpose",
        }
    }
}

/// Dense SPD matrix with its inverse and symmetric square root precomputed.
#[derive(Debug, Clone)]
pub struct DenseSpd {
    matrix: Matrix,
    inverse: Matrix,
    sqrt: Matrix,
    inv_sqrt: Matrix,
}

impl DenseSpd {
    /// Requires a symmetric matrix with strictly positive spectrum.
    pub fn from_matrix(matrix: Matrix) -> Result<Self> {
        Self::build(matrix, None)
    }

    /// Symmetrizes and floors eigenvalues at `rel_floor * λ_max` before factoring.
    pub fn from_matrix_floored(matrix: Matrix, rel_floor: f64) -> Result<Self> {
        Self::build(matrix, Some(rel_floor))
    }

    fn build(matrix: Matrix, floor: Option<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::InvalidParameter(format!(
                "SPD matrix must be square, got {}x{}",
                n,
                matrix.ncols()
            )));
        }
        if n > DENSE_FACTOR_CAP {
            return Err(Error::OracleCapExceeded {
                dim: n,
                cap: DENSE_FACTOR_CAP,
            });
        }
        if n == 0 {
            return Ok(DenseSpd {
                matrix: Matrix::zeros(0, 0),
                inverse: Matrix::zeros(0, 0),
                sqrt: Matrix::zeros(0, 0),
                inv_sqrt: Matrix::zeros(0, 0),
            });
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let asym = (&matrix - &sym).abs().max();
        if floor.is_none() && asym > 1e-12 * sym.abs().max().max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "matrix is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let eig = SymmetricEigen::new(sym);
        let mut values = eig.eigenvalues.clone();
        let vmax = values.max();
        if let Some(rel) = floor {
            let lo = rel * vmax;
            values.apply(|v| *v = v.max(lo));
        }
        let vmin = values.min();
        if vmin <= 0.0 || !vmin.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "matrix is not positive definite (min eigenvalue {vmin:.3e})"
            )));
        }
        let q = &eig.eigenvectors;
        let rebuild = |f: &dyn Fn(f64) -> f64| {
            let scaled = Matrix::from_fn(n, n, |i, j| q[(i, j)] * f(values[j]));
            &scaled * q.transpose()
        };
        let mut matrix = rebuild(&|l| l);
        let mut inverse = rebuild(&|l| 1.0 / l);
        let mut sqrt = rebuild(&f64::sqrt);
        let mut inv_sqrt = rebuild(&|l| 1.0 / l.sqrt());
        for m in [&mut matrix, &mut inverse, &mut sqrt, &mut inv_sqrt] {
            let t = m.transpose();
            *m += t;
            *m *= 0.5;
        }
        Ok(DenseSpd {
            matrix,
            inverse,
            sqrt,
            inv_sqrt,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
}

impl LinearOperator for DenseSpd {
    fn domain_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn codomain_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        &self.matrix * v
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        Some(&self.matrix * w)
    }
    fn label(&self) -> &str {
        "dense-spd"
    }
}

impl SpdOperator for DenseSpd {
    fn inverse_apply(&self, v: &Vector) -> Vector {
        &self.inverse * v
    }
    fn factor_apply(&self, v: &Vector) -> Vector {
        &self.sqrt * v
    }
    fn factor_transpose_apply(&self, v: &Vector) -> Vector {
        &self.sqrt * v
    }
    fn factor_inverse_apply(&self, v: &Vector) -> Vector {
        &self.inv_sqrt * v
    }
    fn factor_inverse_transpose_apply(&self, v: &Vector) -> Vector {
        &self.inv_sqrt * v
    }
}

/// Covariance models used for B, R_i and Q_i.
#[derive(Debug, Clone)]
pub enum CovarianceModel {
    /// `diag(σ²)`; the factor is `diag(σ)`.
    Diagonal { sigma: Vector },
    /// `Σ C Σ` with `C_ij = exp(-d_ij² / 2L²)` on a periodic 1-D grid.
    IsotropicCorrelation {
        sigma: Vector,
        length_scale: f64,
        dense: DenseSpd,
    },
}

fn validate_sigma(sigma: &[f64]) -> Result<Vector> {
    if let Some(bad) = sigma.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "standard deviations must be positive and finite, got {bad}"
        )));
    }
    Ok(Vector::from_column_slice(sigma))
}

impl CovarianceModel {
    pub fn diagonal(sigma: &[f64]) -> Result<Self> {
        Ok(CovarianceModel::Diagonal {
            sigma: validate_sigma(sigma)?,
        })
    }

    pub fn scaled_identity(n: usize, sigma: f64) -> Result<Self> {
        Self::diagonal(&vec![sigma; n])
    }

    pub fn isotropic(sigma: &[f64], length_scale: f64) -> Result<Self> {
        let sigma = validate_sigma(sigma)?;
        if !(length_scale > 0.0) || !length_scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "correlation length-scale must be positive, got {length_scale}"
            )));
        }
        let n = sigma.len();
        let corr = Matrix::from_fn(n, n, |i, j| {
            let raw = i.abs_diff(j);
            let d = raw.min(n - raw) as f64;
            (-d * d / (2.0 * length_scale * length_scale)).exp()
        });
        let cov = Matrix::from_fn(n, n, |i, j| sigma[i] * corr[(i, j)] * sigma[j]);
        let dense = DenseSpd::from_matrix_floored(cov, EIGENVALUE_FLOOR)?;
        Ok(CovarianceModel::IsotropicCorrelation {
            sigma,
            length_scale,
            dense,
        })
    }

    pub fn into_arc(self) -> Arc<dyn SpdOperator> {
        Arc::new(self)
    }
}

impl LinearOperator for CovarianceModel {
    fn domain_dim(&self) -> usize {
        match self {
            CovarianceModel::Diagonal { sigma } => sigma.len(),
            CovarianceModel::IsotropicCorrelation { sigma, .. } => sigma.len(),
        }
    }
    fn codomain_dim(&self) -> usize {
        self.domain_dim()
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        match self {
            CovarianceModel::Diagonal { sigma } => v.zip_map(sigma, |x, s| x * s * s),
            CovarianceModel::IsotropicCorrelation { dense, .. } => dense.apply_unchecked(v),
        }
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        Some(self.apply_unchecked(w))
    }
    fn label(&self) -> &str {
        match self {
            CovarianceModel::Diagonal { .. } => "diagonal-covariance",
            CovarianceModel::IsotropicCorrelation { .. } => "isotropic-covariance",
        }
    }
}

impl SpdOperator for CovarianceModel {
    fn inverse_apply(&self, v: &Vector) -> Vector {
        match self {
            CovarianceModel::Diagonal { sigma } => v.zip_map(sigma, |x, s| x / (s * s)),
            CovarianceModel::IsotropicCorrelation { dense, .. } => dense.inverse_apply(v),
        }
    }
    fn factor_apply(&self, v: &Vector) -> Vector {
        match self {
            CovarianceModel::Diagonal { sigma } => v.zip_map(sigma, |x, s| x * s),
            CovarianceModel::IsotropicCorrelation { dense, .. } => dense.factor_apply(v),
        }
    }
    fn factor_transpose_apply(&self, v: &Vector) -> Vector {
        match self {
            CovarianceModel::Diagonal { sigma } => v.zip_map(sigma, |x, s| x * s),
            CovarianceModel::IsotropicCorrelation { dense, .. } => dense.factor_transpose_apply(v),
        }
    }
    fn factor_inverse_apply(&self, v: &Vector) -> Vector {
        match self {
            CovarianceModel::Diagonal { sigma } => v.zip_map(sigma, |x, s| x / s),
            CovarianceModel::IsotropicCorrelation { dense, .. } => dense.factor_inverse_apply(v),
        }
    }
    fn factor_inverse_transpose_apply(&self, v: &Vector) -> Vector {
        match self {
            CovarianceModel::Diagonal { sigma } => v.zip_map(sigma, |x, s| x / s),
            CovarianceModel::IsotropicCorrelation { dense, .. } => {
                dense.factor_inverse_transpose_apply(v)
            }
        }
    }
}

/// Block-diagonal stack of SPD operators, e.g. `R = diag(R_0..R_N)` or `D = diag(B, Q_1..Q_N)`.
/// Zero-sized blocks are allowed.
#[derive(Clone)]
pub struct BlockDiagSpd {
    blocks: Vec<Arc<dyn SpdOperator>>,
    offsets: Vec<usize>,
}

impl BlockDiagSpd {
    pub fn new(blocks: Vec<Arc<dyn SpdOperator>>) -> Self {
        let mut offsets = vec![0];
        for b in &blocks {
            offsets.push(offsets.last().unwrap() + b.dim());
        }
        BlockDiagSpd { blocks, offsets }
    }

    pub fn blocks(&self) -> &[Arc<dyn SpdOperator>] {
        &self.blocks
    }

    fn map(&self, v: &Vector, f: impl Fn(&dyn SpdOperator, &Vector) -> Vector) -> Vector {
        let mut out = Vector::zeros(v.len());
        for (k, b) in self.blocks.iter().enumerate() {
            let (lo, hi) = (self.offsets[k], self.offsets[k + 1]);
            if hi > lo {
                let part = f(b.as_ref(), &v.rows(lo, hi - lo).into_owned());
                out.rows_mut(lo, hi - lo).copy_from(&part);
            }
        }
        out
    }
}

impl LinearOperator for BlockDiagSpd {
    fn domain_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }
    fn codomain_dim(&self) -> usize {
        self.domain_dim()
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        self.map(v, |b, x| b.apply_unchecked(x))
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        Some(self.apply_unchecked(w))
    }
    fn label(&self) -> &str {
        "block-diagonal-spd"
    }
}

impl SpdOperator for BlockDiagSpd {
    fn inverse_apply(&self, v: &Vector) -> Vector {
        self.map(v, |b, x| b.inverse_apply(x))
    }
    fn factor_apply(&self, v: &Vector) -> Vector {
        self.map(v, |b, x| b.factor_apply(x))
    }
    fn factor_transpose_apply(&self, v: &Vector) -> Vector {
        self.map(v, |b, x| b.factor_transpose_apply(x))
    }
    fn factor_inverse_apply(&self, v: &Vector) -> Vector {
        self.map(v, |b, x| b.factor_inverse_apply(x))
    }
    fn factor_inverse_transpose_apply(&self, v: &Vector) -> Vector {
        self.map(v, |b, x| b.factor_inverse_transpose_apply(x))
    }
}

/// Wraps an SPD operator and counts how often each action is used.
pub struct CountingSpd {
    inner: Arc<dyn SpdOperator>,
    applies: AtomicUsize,
    inverses: AtomicUsize,
}

impl CountingSpd {
    pub fn new(inner: Arc<dyn SpdOperator>) -> Self {
        CountingSpd {
            inner,
            applies: AtomicUsize::new(0),
            inverses: AtomicUsize::new(0),
        }
    }

    pub fn apply_count(&self) -> usize {
        self.applies.load(Ordering::Relaxed)
    }

    pub fn inverse_count(&self) -> usize {
        self.inverses.load(Ordering::Relaxed)
    }
}

impl LinearOperator for CountingSpd {
    fn domain_dim(&self) -> usize {
        self.inner.dim()
    }
    fn codomain_dim(&self) -> usize {
        self.inner.dim()
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        self.applies.fetch_add(1, Ordering::Relaxed);
        self.inner.apply_unchecked(v)
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        Some(self.apply_unchecked(w))
    }
    fn label(&self) -> &str {
        "counting-spd"
    }
}

impl SpdOperator for CountingSpd {
    fn inverse_apply(&self, v: &Vector) -> Vector {
        self.inverses.fetch_add(1, Ordering::Relaxed);
        self.inner.inverse_apply(v)
    }
    fn factor_apply(&self, v: &Vector) -> Vector {
        self.inner.factor_apply(v)
    }
    fn factor_transpose_apply(&self, v: &Vector) -> Vector {
        self.inner.factor_transpose_apply(v)
    }
    fn factor_inverse_apply(&self, v: &Vector) -> Vector {
        self.inner.factor_inverse_apply(v)
    }
    fn factor_inverse_transpose_apply(&self, v: &Vector) -> Vector {
        self.inner.factor_inverse_transpose_apply(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{materialize_dense, DEFAULT_ORACLE_CAP};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_of(c: &Arc<dyn SpdOperator>, action: SpdAction) -> Matrix {
        materialize_dense(&SpdView::operator(c, action), DEFAULT_ORACLE_CAP).unwrap()
    }

    #[test]
    fn diagonal_factor_is_sigma() {
        let c = CovarianceModel::diagonal(&[2.0, 3.0]).unwrap();
        let out = c.factor_apply(&Vector::from_vec(vec![1.0, 1.0]));
        assert_eq!(out, Vector::from_vec(vec![2.0, 3.0]));
    }

    #[test]
    fn non_positive_parameters_rejected() {
        assert!(CovarianceModel::diagonal(&[1.0, 0.0]).is_err());
        assert!(CovarianceModel::diagonal(&[-1.0]).is_err());
        assert!(CovarianceModel::isotropic(&[1.0; 4], 0.0).is_err());
        assert!(CovarianceModel::isotropic(&[1.0; 4], -2.0).is_err());
    }

    #[test]
    fn isotropic_factor_reproduces_covariance() {
        let sigma: Vec<f64> = (0..16).map(|i| 0.5 + 0.1 * i as f64).collect();
        let c = CovarianceModel::isotropic(&sigma, 2.0).unwrap().into_arc();
        let cd = dense_of(&c, SpdAction::Apply);
        let u = dense_of(&c, SpdAction::Factor);
        let ut = dense_of(&c, SpdAction::FactorTranspose);
        assert!((&u * &ut - &cd).abs().max() <= 1e-10 * cd.abs().max());
        let eig = SymmetricEigen::new(cd.clone()).eigenvalues;
        assert!(eig.min() > 0.0);
        // SpdOperator contract: adjoint = apply.
        assert!((cd.transpose() - &cd).abs().max() == 0.0);
    }

    #[test]
    fn inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // L = 2 on a 16-point periodic grid floors to κ ≈ 1e10; L = 1 keeps κ ≈ 70.
        let c = CovarianceModel::isotropic(&[1.3; 16], 1.0).unwrap();
        let v = Vector::from_fn(16, |_, _| rng.gen_range(-1.0..1.0));
        let back = c.inverse_apply(&c.apply_unchecked(&v));
        assert!((back - &v).norm() <= 1e-10 * v.norm());
        let back = c.factor_inverse_apply(&c.factor_apply(&v));
        assert!((back - &v).norm() <= 1e-10 * v.norm());
    }

    #[test]
    fn dense_spd_rejects_indefinite() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(DenseSpd::from_matrix(m).is_err());
    }

    #[test]
    fn block_diag_handles_empty_blocks() {
        let a = CovarianceModel::diagonal(&[2.0]).unwrap().into_arc();
        let e = CovarianceModel::diagonal(&[]).unwrap().into_arc();
        let b = CovarianceModel::diagonal(&[3.0, 1.0]).unwrap().into_arc();
        let d = BlockDiagSpd::new(vec![a, e, b]);
        assert_eq!(d.dim(), 3);
        let v = Vector::from_vec(vec![1.0, 1.0, 1.0]);
        assert_eq!(d.apply_unchecked(&v), Vector::from_vec(vec![4.0, 9.0, 1.0]));
        assert_eq!(d.inverse_apply(&d.apply_unchecked(&v)), v);
    }

    #[test]
    fn counting_wrapper_counts_inverses() {
        let c = Arc::new(CountingSpd::new(
            CovarianceModel::diagonal(&[1.0, 2.0]).unwrap().into_arc(),
        ));
        let v = Vector::from_vec(vec![1.0, 1.0]);
        c.inverse_apply(&v);
        c.apply_unchecked(&v);
        assert_eq!((c.inverse_count(), c.apply_count()), (1, 1));
    }
}
