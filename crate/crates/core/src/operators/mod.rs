//! Matrix-free linear operators.
//!
//! Every covariance, Jacobian, Hessian and preconditioner in the toolkit is a
//! [`LinearOperator`]: something that maps a vector of length `domain_dim` to
//! a vector of length `codomain_dim`, optionally with an adjoint. [`Operator`]
//! is the shared, cloneable handle used to build compositions, sums and block
//! structures without ever forming a matrix.

mod coupling;
mod covariance;
mod dense;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

pub use coupling::TimeCoupling;
pub use covariance::{
    BlockDiagSpd, CountingSpd, CovarianceModel, DenseSpd, SpdAction, SpdOperator, SpdView,
};
pub use dense::{materialize_dense, materialize_dense_adjoint, DEFAULT_ORACLE_CAP};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// A linear map `R^domain_dim -> R^codomain_dim` accessed only through its action.
pub trait LinearOperator: Send + Sync {
    fn domain_dim(&self) -> usize;
    fn codomain_dim(&self) -> usize;

    /// Applies the operator. `v.len()` must equal `domain_dim`.
    fn apply_unchecked(&self, v: &Vector) -> Vector;

    fn has_adjoint(&self) -> bool {
        false
    }

    /// Applies the adjoint when one exists. `w.len()` must equal `codomain_dim`.
    fn try_adjoint_unchecked(&self, _w: &Vector) -> Option<Vector> {
        None
    }

    fn label(&self) -> &str {
        "operator"
    }

    fn apply(&self, v: &Vector) -> Result<Vector> {
        check_dim(self.label(), self.domain_dim(), v.len())?;
        Ok(self.apply_unchecked(v))
    }

    fn apply_adjoint(&self, w: &Vector) -> Result<Vector> {
        check_dim(self.label(), self.codomain_dim(), w.len())?;
        self.try_adjoint_unchecked(w)
            .ok_or_else(|| Error::NoAdjoint(self.label().to_string()))
    }
}

/// Shared handle to a [`LinearOperator`] with composition helpers.
#[derive(Clone)]
pub struct Operator(Arc<dyn LinearOperator>);

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Operator({}: {} -> {})",
            self.0.label(),
            self.0.domain_dim(),
            self.0.codomain_dim()
        )
    }
}

impl LinearOperator for Operator {
    fn domain_dim(&self) -> usize {
        self.0.domain_dim()
    }
    fn codomain_dim(&self) -> usize {
        self.0.codomain_dim()
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        self.0.apply_unchecked(v)
    }
    fn has_adjoint(&self) -> bool {
        self.0.has_adjoint()
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        self.0.try_adjoint_unchecked(w)
    }
    fn label(&self) -> &str {
        self.0.label()
    }
}

impl Operator {
    pub fn new<T: LinearOperator + 'static>(op: T) -> Self {
        Operator(Arc::new(op))
    }

    pub fn from_arc(op: Arc<dyn LinearOperator>) -> Self {
        Operator(op)
    }

    pub fn identity(n: usize) -> Self {
        Self::new(Identity { n })
    }

    pub fn zero(codomain_dim: usize, domain_dim: usize) -> Self {
        Self::new(Zero {
            rows: codomain_dim,
            cols: domain_dim,
        })
    }

    /// Wraps a dense matrix; the adjoint is the transpose.
    pub fn dense(matrix: Matrix) -> Self {
        Self::new(DenseOperator { matrix })
    }

    /// Builds an operator from closures. The adjoint closure is optional.
    pub fn from_fn<F, G>(codomain_dim: usize, domain_dim: usize, apply: F, adjoint: Option<G>) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
        G: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        Self::new(FnOperator {
            rows: codomain_dim,
            cols: domain_dim,
            apply: Box::new(apply),
            adjoint: adjoint.map(|g| Box::new(g) as Box<AdjointFn>),
        })
    }

    /// `self ∘ inner`, i.e. `v -> self(inner(v))`.
    pub fn compose(&self, inner: &Operator) -> Result<Operator> {
        check_dim("composition", self.domain_dim(), inner.codomain_dim())?;
        Ok(Self::new(Composition {
            outer: self.clone(),
            inner: inner.clone(),
        }))
    }

    /// Composes a chain applied right to left: `chain[0] ∘ chain[1] ∘ ...`.
    pub fn chain(ops: &[Operator]) -> Result<Operator> {
        let (last, rest) = ops
            .split_last()
            .ok_or_else(|| Error::InvalidParameter("empty operator chain".into()))?;
        rest.iter().rev().try_fold(last.clone(), |acc, op| op.compose(&acc))
    }

    pub fn add(&self, other: &Operator) -> Result<Operator> {
        check_dim("sum (domain)", self.domain_dim(), other.domain_dim())?;
        check_dim("sum (codomain)", self.codomain_dim(), other.codomain_dim())?;
        Ok(Self::new(Sum {
            terms: vec![self.clone(), other.clone()],
        }))
    }

    pub fn scale(&self, factor: f64) -> Operator {
        Self::new(Scaled {
            op: self.clone(),
            factor,
        })
    }

    /// The adjoint as an operator in its own right.
    pub fn transpose(&self) -> Result<Operator> {
        if !self.has_adjoint() {
            return Err(Error::NoAdjoint(self.label().to_string()));
        }
        Ok(Self::new(Transposed { op: self.clone() }))
    }

    /// General block operator. `blocks[i][j]` is `None` for a zero block.
    /// Row heights and column widths are taken from `row_dims` / `col_dims`.
    pub fn blocks(
        row_dims: Vec<usize>,
        col_dims: Vec<usize>,
        blocks: Vec<Vec<Option<Operator>>>,
    ) -> Result<Operator> {
        if blocks.len() != row_dims.len() {
            return Err(Error::InvalidParameter(format!(
                "block operator has {} block rows but {} row dims",
                blocks.len(),
                row_dims.len()
            )));
        }
        for (i, row) in blocks.iter().enumerate() {
            check_dim("block operator column count", col_dims.len(), row.len())?;
            for (j, block) in row.iter().enumerate() {
                if let Some(op) = block {
                    check_dim(&format!("block ({i},{j}) rows"), row_dims[i], op.codomain_dim())?;
                    check_dim(&format!("block ({i},{j}) cols"), col_dims[j], op.domain_dim())?;
                }
            }
        }
        Ok(Self::new(BlockOperator::new(row_dims, col_dims, blocks)))
    }

    pub fn block_diag(ops: &[Operator]) -> Result<Operator> {
        let rows: Vec<usize> = ops.iter().map(|o| o.codomain_dim()).collect();
        let cols: Vec<usize> = ops.iter().map(|o| o.domain_dim()).collect();
        let grid = (0..ops.len())
            .map(|i| {
                (0..ops.len())
                    .map(|j| (i == j).then(|| ops[i].clone()))
                    .collect()
            })
            .collect();
        Self::blocks(rows, cols, grid)
    }

    /// Stacks operators sharing a domain on top of each other.
    pub fn vstack(ops: &[Operator]) -> Result<Operator> {
        let cols = ops
            .first()
            .map(|o| o.domain_dim())
            .ok_or_else(|| Error::InvalidParameter("empty vstack".into()))?;
        let rows = ops.iter().map(|o| o.codomain_dim()).collect();
        let grid = ops.iter().map(|o| vec![Some(o.clone())]).collect();
        Self::blocks(rows, vec![cols], grid)
    }

    pub fn with_label(&self, label: &str) -> Operator {
        Self::new(Labeled {
            op: self.clone(),
            label: label.to_string(),
        })
    }
}

struct Identity {
    n: usize,
}

impl LinearOperator for Identity {
    fn domain_dim(&self) -> usize {
        self.n
    }
    fn codomain_dim(&self) -> usize {
        self.n
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        v.clone()
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        Some(w.clone())
    }
    fn label(&self) -> &str {
        "identity"
    }
}

struct Zero {
    rows: usize,
    cols: usize,
}

impl LinearOperator for Zero {
    fn domain_dim(&self) -> usize {
        self.cols
    }
    fn codomain_dim(&self) -> usize {
        self.rows
    }
    fn apply_unchecked(&self, _v: &Vector) -> Vector {
        Vector::zeros(self.rows)
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn try_adjoint_unchecked(&self, _w: &Vector) -> Option<Vector> {
        Some(Vector::zeros(self.cols))
    }
    fn label(&self) -> &str {
        "zero"
    }
}

struct DenseOperator {
    matrix: Matrix,
}

impl LinearOperator for DenseOperator {
    fn domain_dim(&self) -> usize {
        self.matrix.ncols()
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
        Some(self.matrix.tr_mul(w))
    }
    fn label(&self) -> &str {
        "dense"
    }
}

type ApplyFn = dyn Fn(&Vector) -> Vector + Send + Sync;
type AdjointFn = dyn Fn(&Vector) -> Vector + Send + Sync;

struct FnOperator {
    rows: usize,
    cols: usize,
    apply: Box<ApplyFn>,
    adjoint: Option<Box<AdjointFn>>,
}

impl LinearOperator for FnOperator {
    fn domain_dim(&self) -> usize {
        self.cols
    }
    fn codomain_dim(&self) -> usize {
        self.rows
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        (self.apply)(v)
    }
    fn has_adjoint(&self) -> bool {
        self.adjoint.is_some()
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        self.adjoint.as_ref().map(|g| g(w))
    }
    fn label(&self) -> &str {
        "closure"
    }
}

struct Composition {
    outer: Operator,
    inner: Operator,
}

impl LinearOperator for Composition {
    fn domain_dim(&self) -> usize {
        self.inner.domain_dim()
    }
    fn codomain_dim(&self) -> usize {
        self.outer.codomain_dim()
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        self.outer.apply_unchecked(&self.inner.apply_unchecked(v))
    }
    fn has_adjoint(&self) -> bool {
        self.outer.has_adjoint() && self.inner.has_adjoint()
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        let mid = self.outer.try_adjoint_unchecked(w)?;
        self.inner.try_adjoint_unchecked(&mid)
    }
    fn label(&self) -> &str {
        "composition"
    }
}

struct Sum {
    terms: Vec<Operator>,
}

impl LinearOperator for Sum {
    fn domain_dim(&self) -> usize {
        self.terms[0].domain_dim()
    }
    fn codomain_dim(&self) -> usize {
        self.terms[0].codomain_dim()
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        let mut out = self.terms[0].apply_unchecked(v);
        for t in &self.terms[1..] {
            out += t.apply_unchecked(v);
        }
        out
    }
    fn has_adjoint(&self) -> bool {
        self.terms.iter().all(|t| t.has_adjoint())
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        let mut out = self.terms[0].try_adjoint_unchecked(w)?;
        for t in &self.terms[1..] {
            out += t.try_adjoint_unchecked(w)?;
        }
        Some(out)
    }
    fn label(&self) -> &str {
        "sum"
    }
}

struct Scaled {
    op: Operator,
    factor: f64,
}

impl LinearOperator for Scaled {
    fn domain_dim(&self) -> usize {
        self.op.domain_dim()
    }
    fn codomain_dim(&self) -> usize {
        self.op.codomain_dim()
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        self.op.apply_unchecked(v) * self.factor
    }
    fn has_adjoint(&self) -> bool {
        self.op.has_adjoint()
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        self.op.try_adjoint_unchecked(w).map(|x| x * self.factor)
    }
    fn label(&self) -> &str {
        "scaled"
    }
}

struct Transposed {
    op: Operator,
}

impl LinearOperator for Transposed {
    fn domain_dim(&self) -> usize {
        self.op.codomain_dim()
    }
    fn codomain_dim(&self) -> usize {
        self.op.domain_dim()
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        self.op
            .try_adjoint_unchecked(v)
            .expect("transpose built from an operator with an adjoint")
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        Some(self.op.apply_unchecked(w))
    }
    fn label(&self) -> &str {
        "transpose"
    }
}

struct Labeled {
    op: Operator,
    label: String,
}

impl LinearOperator for Labeled {
    fn domain_dim(&self) -> usize {
        self.op.domain_dim()
    }
    fn codomain_dim(&self) -> usize {
        self.op.codomain_dim()
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        self.op.apply_unchecked(v)
    }
    fn has_adjoint(&self) -> bool {
        self.op.has_adjoint()
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        self.op.try_adjoint_unchecked(w)
    }
    fn label(&self) -> &str {
        &self.label
    }
}

struct BlockOperator {
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
    blocks: Vec<Vec<Option<Operator>>>,
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(dims.len() + 1);
    out.push(0);
    for d in dims {
        out.push(out.last().unwrap() + d);
    }
    out
}

impl BlockOperator {
    fn new(row_dims: Vec<usize>, col_dims: Vec<usize>, blocks: Vec<Vec<Option<Operator>>>) -> Self {
        BlockOperator {
            row_offsets: offsets(&row_dims),
            col_offsets: offsets(&col_dims),
            blocks,
        }
    }
}

impl LinearOperator for BlockOperator {
    fn domain_dim(&self) -> usize {
        *self.col_offsets.last().unwrap()
    }
    fn codomain_dim(&self) -> usize {
        *self.row_offsets.last().unwrap()
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        let mut out = Vector::zeros(self.codomain_dim());
        for (i, row) in self.blocks.iter().enumerate() {
            let (r0, r1) = (self.row_offsets[i], self.row_offsets[i + 1]);
            for (j, block) in row.iter().enumerate() {
                if let Some(op) = block {
                    let (c0, c1) = (self.col_offsets[j], self.col_offsets[j + 1]);
                    let part = op.apply_unchecked(&v.rows(c0, c1 - c0).into_owned());
                    let mut dst = out.rows_mut(r0, r1 - r0);
                    dst += part;
                }
            }
        }
        out
    }
    fn has_adjoint(&self) -> bool {
        self.blocks.iter().flatten().flatten().all(|b| b.has_adjoint())
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        let mut out = Vector::zeros(self.domain_dim());
        for (i, row) in self.blocks.iter().enumerate() {
            let (r0, r1) = (self.row_offsets[i], self.row_offsets[i + 1]);
            let wi = w.rows(r0, r1 - r0).into_owned();
            for (j, block) in row.iter().enumerate() {
                if let Some(op) = block {
                    let (c0, c1) = (self.col_offsets[j], self.col_offsets[j + 1]);
                    let part = op.try_adjoint_unchecked(&wi)?;
                    let mut dst = out.rows_mut(c0, c1 - c0);
                    dst += part;
                }
            }
        }
        Some(out)
    }
    fn label(&self) -> &str {
        "block"
    }
}

/// Splits a stacked vector into consecutive blocks of the given lengths.
pub fn split_blocks(v: &Vector, dims: &[usize]) -> Vec<Vector> {
    let mut out = Vec::with_capacity(dims.len());
    let mut start = 0;
    for &d in dims {
        out.push(v.rows(start, d).into_owned());
        start += d;
    }
    out
}

/// Concatenates blocks into one stacked vector.
pub fn stack_blocks(blocks: &[Vector]) -> Vector {
    let total = blocks.iter().map(|b| b.len()).sum();
    let mut out = Vector::zeros(total);
    let mut start = 0;
    for b in blocks {
        out.rows_mut(start, b.len()).copy_from(b);
        start += b.len();
    }
    out
}
