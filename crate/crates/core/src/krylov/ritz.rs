//! Ritz pairs from the Lanczos information carried by PCG.
//!
//! Without a preconditioner the CG coefficients define the Lanczos
//! tridiagonal `T_k` with diagonal `1/α_j + β_{j-1}/α_{j-1}` and off-diagonal
//! `sqrt(β_j)/α_j`, and the normalised residuals are the Lanczos vectors.
//! With a preconditioner the Rayleigh–Ritz problem for `A` itself is solved on
//! the span of the search directions, so the returned pairs always
//! approximate eigenpairs of `A`.

use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{pcg, SearchDirections, SolveReport, SolverConfig};
use crate::error::Result;
use crate::operators::{LinearOperator, Matrix, Vector};

#[derive(Debug, Clone)]
pub struct RitzPair {
    pub value: f64,
    /// Unit-norm Ritz vector.
    pub vector: Vector,
    /// Bound on `‖A y − θ y‖`.
    pub estimate: f64,
    pub converged: bool,
}

#[derive(Default)]
pub(super) struct LanczosData {
    alphas: Vec<f64>,
    betas: Vec<f64>,
    vectors: Vec<Vector>,
}

impl LanczosData {
    pub(super) fn push_vector(&mut self, r: &Vector, rho: f64) {
        let sign = if self.vectors.len() % 2 == 0 { 1.0 } else { -1.0 };
        if rho > 0.0 {
            self.vectors.push(r * (sign / rho.sqrt()));
        } else {
            self.vectors.push(Vector::zeros(r.len()));
        }
    }

    pub(super) fn push_coefficients(&mut self, alpha: f64, beta: f64) {
        self.alphas.push(alpha);
        self.betas.push(beta);
    }

    fn tridiagonal(&self) -> Matrix {
        let k = self.alphas.len();
        let mut t = Matrix::zeros(k, k);
        for j in 0..k {
            t[(j, j)] = 1.0 / self.alphas[j];
            if j > 0 {
                t[(j, j)] += self.betas[j - 1] / self.alphas[j - 1];
                let off = self.betas[j - 1].sqrt() / self.alphas[j - 1];
                t[(j, j - 1)] = off;
                t[(j - 1, j)] = off;
            }
        }
        t
    }
}

fn finish(mut pairs: Vec<RitzPair>, count: usize, threshold: f64) -> (Vec<RitzPair>, bool) {
    pairs.sort_by(|a, b| b.value.total_cmp(&a.value));
    let truncated = pairs.len() < count;
    pairs.truncate(count);
    let top = pairs.first().map_or(0.0, |p| p.value.abs());
    for p in &mut pairs {
        p.converged = p.estimate <= threshold * top;
    }
    (pairs, truncated)
}

/// Dominant Ritz pairs from unpreconditioned CG coefficients.
pub(super) fn extract_ritz(data: &LanczosData, count: usize, threshold: f64) -> (Vec<RitzPair>, bool) {
    let k = data.alphas.len();
    if k == 0 {
        return (Vec::new(), count > 0);
    }
    let eig = SymmetricEigen::new(data.tridiagonal());
    let coupling = data.betas[k - 1].sqrt() / data.alphas[k - 1];
    let top = eig.eigenvalues.amax();
    let rounding = 64.0 * f64::EPSILON * top * k as f64;
    let pairs = (0..k)
        .map(|i| {
            let s = eig.eigenvectors.column(i);
            let mut y = Vector::zeros(data.vectors[0].len());
            for (j, v) in data.vectors[..k].iter().enumerate() {
                y.axpy(s[j], v, 1.0);
            }
            let norm = y.norm();
            if norm > 0.0 {
                y /= norm;
            }
            RitzPair {
                value: eig.eigenvalues[i],
                vector: y,
                estimate: coupling * s[k - 1].abs() + rounding,
                converged: false,
            }
        })
        .collect();
    finish(pairs, count, threshold)
}

/// Rayleigh–Ritz for `A` on the span of the search directions.
pub(super) fn extract_ritz_rayleigh(
    dirs: &SearchDirections,
    count: usize,
    threshold: f64,
) -> (Vec<RitzPair>, bool) {
    let k = dirs.p.len();
    if k == 0 {
        return (Vec::new(), count > 0);
    }
    let n = dirs.p[0].len();
    let scaled = |vs: &[Vector]| {
        Matrix::from_fn(n, k, |i, j| vs[j][i] / dirs.p[j].norm())
    };
    let (pm, apm) = (scaled(&dirs.p), scaled(&dirs.ap));
    let svd = pm.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return (Vec::new(), true);
    };
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..k)
        .filter(|&i| svd.singular_values[i] > 1e-10 * smax)
        .collect();
    let r = keep.len();
    // Orthonormal basis Q of span(P) and A Q = A P V Σ⁻¹.
    let q = Matrix::from_fn(n, r, |i, j| u[(i, keep[j])]);
    let weights = Matrix::from_fn(k, r, |i, j| v_t[(keep[j], i)] / svd.singular_values[keep[j]]);
    let aq = &apm * weights;
    let reduced = q.transpose() * &aq;
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let eig = SymmetricEigen::new(reduced);
    let pairs = (0..r)
        .map(|i| {
            let c = eig.eigenvectors.column(i);
            let y = &q * c;
            let ay = &aq * c;
            let theta = eig.eigenvalues[i];
            RitzPair {
                value: theta,
                estimate: (ay - &y * theta).norm(),
                vector: y,
                converged: false,
            }
        })
        .collect();
    finish(pairs, count, threshold)
}

/// Runs reorthogonalised PCG from a seeded Gaussian right-hand side and
/// returns the `count` dominant Ritz pairs of `A`.
pub fn lanczos_ritz(
    a: &dyn LinearOperator,
    precond: Option<&dyn LinearOperator>,
    count: usize,
    cfg: &SolverConfig,
) -> Result<(Vec<RitzPair>, SolveReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let b = Vector::from_fn(a.domain_dim(), |_, _| StandardNormal.sample(&mut rng));
    let run = SolverConfig {
        ritz_pairs: count,
        reorthogonalize: true,
        monitor_quadratic_cost: false,
        ..cfg.clone()
    };
    let (_, report) = pcg(a, &b, precond, &run)?;
    Ok((report.ritz.clone(), report))
}
