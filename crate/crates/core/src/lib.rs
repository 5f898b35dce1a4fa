//! Matrix-free variational data assimilation.
//!
//! The crate is organised bottom-up:
//!
//! * [`operators`]: linear operators, covariance models and the time coupling `F`, `F⁻¹`.
//! * [`models`]: toy dynamics (Lorenz-96, linear advection) and observation operators
//!   with tangent-linear and adjoint code.
//! * [`problem`]: 4DVar costs, gradients, Gauss–Newton linearization and assembly of the
//!   primal, dual and augmented linear systems.
//! * [`krylov`]: truncated PCG, CGLS, MINRES, GMRES, RPCG and Ritz extraction.
//! * [`precond`]: first-level transforms, limited-memory preconditioners and `F̃`-based
//!   weak-state preconditioners.
//! * [`saddle`]: block preconditioners for the 3×3 saddle-point system and the
//!   safeguarded inner solve.
//! * [`driver`]: twin experiments, the truncated Gauss–Newton loop and report output.

pub mod driver;
pub mod error;
pub mod krylov;
pub mod models;
pub mod operators;
pub mod precond;
pub mod saddle;
pub mod problem;

pub use error::{Error, Result};
