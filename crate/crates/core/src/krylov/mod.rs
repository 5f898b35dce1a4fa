//! Truncated Krylov solvers.
//!
//! Every solver starts from a zero initial guess unless a warm start is passed
//! explicitly, runs for at most `max_iterations` iterations and stops early once
//! the relative residual drops below `tolerance`.

mod cgls;
mod gmres;
mod minres;
mod pcg;
mod ritz;
mod rpcg;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::Vector;

pub use cgls::cgls;
pub use gmres::gmres;
pub use minres::minres;
pub use pcg::{pcg, pcg_from};
pub use ritz::{lanczos_ritz, RitzPair};
pub use rpcg::{rpcg, RpcgSolution};

/// Relative size below which a curvature or normalisation is treated as zero.
pub const BREAKDOWN_TOLERANCE: f64 = 1e-14;

/// Cost functional evaluated on iterates by MINRES and GMRES.
pub type Monitor<'a> = &'a dyn Fn(&Vector) -> f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Truncation budget.
    pub max_iterations: usize,
    /// Relative (preconditioned) residual tolerance.
    pub tolerance: f64,
    pub reorthogonalize: bool,
    pub monitor_quadratic_cost: bool,
    /// Number of dominant Ritz pairs to extract (PCG only).
    pub ritz_pairs: usize,
    /// A Ritz pair counts as converged when its estimate is at most this
    /// fraction of the largest Ritz value.
    pub ritz_threshold: f64,
    /// Keep `p_j` and `A p_j` (PCG only).
    pub keep_search_directions: bool,
    /// Keep every iterate.
    pub keep_iterates: bool,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 50,
            tolerance: 1e-6,
            reorthogonalize: true,
            monitor_quadratic_cost: true,
            ritz_pairs: 0,
            ritz_threshold: 1e-6,
            keep_search_directions: false,
            keep_iterates: false,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn with_budget(max_iterations: usize, tolerance: f64) -> Self {
        SolverConfig {
            max_iterations,
            tolerance,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance must lie in (0, 1), got {}",
                self.tolerance
            )));
        }
        if !(self.ritz_threshold > 0.0) {
            return Err(Error::InvalidParameter(
                "ritz_threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Tolerance,
    Budget,
    Breakdown,
}

/// Search directions `p_j` with their images `A p_j`.
#[derive(Debug, Clone, Default)]
pub struct SearchDirections {
    pub p: Vec<Vector>,
    pub ap: Vec<Vector>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    /// Residual norm before the first and after every iteration.
    pub residual_norms: Vec<f64>,
    /// Monitored cost at the same points as `residual_norms` (empty when off).
    pub quadratic_costs: Vec<f64>,
    /// Dominant Ritz pairs, largest first.
    pub ritz: Vec<RitzPair>,
    /// Fewer Ritz pairs than requested were available.
    pub ritz_truncated: bool,
    pub search_directions: Option<SearchDirections>,
    /// Iterates `x_0, x_1, ..` when requested.
    pub iterates: Vec<Vector>,
    pub termination: Termination,
}

impl SolveReport {
    fn start(r0: f64) -> Self {
        SolveReport {
            iterations: 0,
            residual_norms: vec![r0],
            quadratic_costs: Vec::new(),
            ritz: Vec::new(),
            ritz_truncated: false,
            search_directions: None,
            iterates: Vec::new(),
            termination: Termination::Budget,
        }
    }

    pub fn final_residual(&self) -> f64 {
        *self.residual_norms.last().unwrap_or(&0.0)
    }

    /// Relative reduction of the residual norm.
    pub fn relative_residual(&self) -> f64 {
        let r0 = self.residual_norms[0];
        if r0 == 0.0 {
            0.0
        } else {
            self.final_residual() / r0
        }
    }

    /// Converged Ritz pairs only.
    pub fn converged_ritz(&self) -> Vec<RitzPair> {
        self.ritz.iter().filter(|p| p.converged).cloned().collect()
    }
}

/// Stored pairs `(r_i, z_i)` scaled so that `r_iᵀ z_i = 1`.
#[derive(Default)]
struct Reorthogonalizer {
    pairs: Vec<(Vector, Vector)>,
}

impl Reorthogonalizer {
    fn push(&mut self, r: &Vector, z: &Vector, rho: f64) {
        if rho > 0.0 {
            let scale = 1.0 / rho.sqrt();
            self.pairs.push((r * scale, z * scale));
        }
    }

    /// Two passes of modified Gram–Schmidt in the `z`-inner product.
    fn apply(&self, r: &mut Vector, z: &mut Vector) {
        for _ in 0..2 {
            for (ri, zi) in &self.pairs {
                let c = zi.dot(r);
                r.axpy(-c, ri, 1.0);
                z.axpy(-c, zi, 1.0);
            }
        }
    }
}
