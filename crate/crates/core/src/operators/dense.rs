use super::{LinearOperator, Matrix, Vector};
use crate::error::{Error, Result};

/// Largest dimension the dense oracles will materialize.
pub const DEFAULT_ORACLE_CAP: usize = 2000;

/// Builds the dense matrix of `op` column by column from `apply(e_j)`.
pub fn materialize_dense(op: &dyn LinearOperator, cap: usize) -> Result<Matrix> {
    let cols = op.domain_dim();
    let rows = op.codomain_dim();
    let dim = cols.max(rows);
    if dim > cap {
        return Err(Error::OracleCapExceeded { dim, cap });
    }
    let mut out = Matrix::zeros(rows, cols);
    let mut e = Vector::zeros(cols);
    for j in 0..cols {
        e[j] = 1.0;
        out.set_column(j, &op.apply_unchecked(&e));
        e[j] = 0.0;
    }
    Ok(out)
}

/// Dense matrix of the adjoint of `op`, built from `apply_adjoint(e_j)`.
pub fn materialize_dense_adjoint(op: &dyn LinearOperator, cap: usize) -> Result<Matrix> {
    let cols = op.codomain_dim();
    let rows = op.domain_dim();
    let dim = cols.max(rows);
    if dim > cap {
        return Err(Error::OracleCapExceeded { dim, cap });
    }
    let mut out = Matrix::zeros(rows, cols);
    let mut e = Vector::zeros(cols);
    for j in 0..cols {
        e[j] = 1.0;
        out.set_column(j, &op.apply_adjoint(&e)?);
        e[j] = 0.0;
    }
    Ok(out)
}
