//! Limited-memory preconditioners.
//!
//! The general LMP for an SPD operator `A` and basis `Z` is
//! `P = (I − Z (ZᵀAZ)⁻¹ ZᵀA)(I − AZ (ZᵀAZ)⁻¹ Zᵀ) + θ Z (ZᵀAZ)⁻¹ Zᵀ`.
//! `Z` is stored A-orthonormalised as `W` together with `AW`, so that
//! `Z (ZᵀAZ)⁻¹ Zᵀ = W Wᵀ` and one application costs `O(ℓ n)` with no
//! application of `A`.
//!
//! The spectral LMP for orthonormal eigenvectors `z_i` with eigenvalues `λ_i`
//! is `P = I − Σ (1 − θ/λ_i) z_i z_iᵀ`; its square root replaces `λ_i` and `θ`
//! by their square roots.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::krylov::{RitzPair, SearchDirections, SolveReport};
use crate::operators::{LinearOperator, Vector};

/// Relative pivot below which a column of `Z` is treated as dependent.
const PIVOT_TOLERANCE: f64 = 1e-12;

/// Number of candidates in the condition-number scan for `θ`.
pub const THETA_SCAN_POINTS: usize = 200;

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("θ must be positive, got {theta}")))
    }
}

#[derive(Debug, Clone)]
pub struct Lmp {
    n: usize,
    w: Vec<Vector>,
    aw: Vec<Vector>,
    theta: f64,
}

impl Lmp {
    /// The identity on `n`-vectors (`ℓ = 0`).
    pub fn identity(n: usize) -> Self {
        Lmp {
            n,
            w: Vec::new(),
            aw: Vec::new(),
            theta: 1.0,
        }
    }

    /// Builds the LMP, applying `A` once per column of `Z`.
    pub fn new(a: &dyn LinearOperator, z: &[Vector], theta: f64) -> Result<Self> {
        let az = z.iter().map(|zi| a.apply(zi)).collect::<Result<Vec<_>>>()?;
        Self::with_products(a.domain_dim(), z, &az, theta)
    }

    /// Builds the LMP from `Z` and precomputed `AZ`.
    pub fn with_products(n: usize, z: &[Vector], az: &[Vector], theta: f64) -> Result<Self> {
        check_theta(theta)?;
        check_dim("LMP products", z.len(), az.len())?;
        let mut w: Vec<Vector> = Vec::with_capacity(z.len());
        let mut aw: Vec<Vector> = Vec::with_capacity(z.len());
        for (j, (zj, azj)) in z.iter().zip(az).enumerate() {
            check_dim("LMP basis vector", n, zj.len())?;
            check_dim("LMP product vector", n, azj.len())?;
            let original = zj.dot(azj);
            let mut v = zj.clone();
            let mut av = azj.clone();
            for _ in 0..2 {
                for (wi, awi) in w.iter().zip(&aw) {
                    let c = awi.dot(&v);
                    v.axpy(-c, wi, 1.0);
                    av.axpy(-c, awi, 1.0);
                }
            }
            let pivot = v.dot(&av);
            if !(pivot > PIVOT_TOLERANCE * original.abs()) || !(original > 0.0) {
                log::warn!("LMP: dropping dependent column {j} (relative pivot {:.3e})", pivot / original);
                continue;
            }
            let scale = 1.0 / pivot.sqrt();
            w.push(v * scale);
            aw.push(av * scale);
        }
        Ok(Lmp { n, w, aw, theta })
    }

    /// Number of retained columns `ℓ`.
    pub fn rank(&self) -> usize {
        self.w.len()
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    fn apply_vec(&self, v: &Vector) -> Vector {
        let coeffs: Vec<f64> = self.w.iter().map(|wi| wi.dot(v)).collect();
        let mut y = v.clone();
        for (awi, &c) in self.aw.iter().zip(&coeffs) {
            y.axpy(-c, awi, 1.0);
        }
        let second: Vec<f64> = self.aw.iter().map(|awi| awi.dot(&y)).collect();
        for ((wi, &c2), &c) in self.w.iter().zip(&second).zip(&coeffs) {
            y.axpy(self.theta * c - c2, wi, 1.0);
        }
        y
    }
}

impl LinearOperator for Lmp {
    fn domain_dim(&self) -> usize {
        self.n
    }
    fn codomain_dim(&self) -> usize {
        self.n
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        self.apply_vec(v)
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        Some(self.apply_vec(w))
    }
    fn label(&self) -> &str {
        "lmp"
    }
}

#[derive(Debug, Clone)]
pub struct SpectralLmp {
    n: usize,
    vectors: Vec<Vector>,
    values: Vec<f64>,
    theta: f64,
    sqrt: bool,
}

impl SpectralLmp {
    pub fn identity(n: usize) -> Self {
        SpectralLmp {
            n,
            vectors: Vec::new(),
            values: Vec::new(),
            theta: 1.0,
            sqrt: false,
        }
    }

    /// `pairs` are `(λ_i, z_i)`; the vectors are re-orthonormalised.
    pub fn new(n: usize, pairs: &[(f64, Vector)], theta: f64) -> Result<Self> {
        check_theta(theta)?;
        let mut vectors: Vec<Vector> = Vec::with_capacity(pairs.len());
        let mut values = Vec::with_capacity(pairs.len());
        for (lambda, z) in pairs {
            check_dim("spectral LMP vector", n, z.len())?;
            if !(*lambda > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "spectral LMP needs positive eigenvalues, got {lambda}"
                )));
            }
            let mut v = z.clone();
            for _ in 0..2 {
                for q in &vectors {
                    let c = q.dot(&v);
                    v.axpy(-c, q, 1.0);
                }
            }
            let norm = v.norm();
            if norm <= PIVOT_TOLERANCE.sqrt() * z.norm() || norm == 0.0 {
                log::warn!("spectral LMP: dropping dependent vector for λ = {lambda}");
                continue;
            }
            vectors.push(v / norm);
            values.push(*lambda);
        }
        Ok(SpectralLmp {
            n,
            vectors,
            values,
            theta,
            sqrt: false,
        })
    }

    /// `P^{1/2}`, obtained by replacing `λ_i` and `θ` by their square roots.
    pub fn sqrt_operator(&self) -> SpectralLmp {
        SpectralLmp {
            sqrt: true,
            ..self.clone()
        }
    }

    pub fn rank(&self) -> usize {
        self.vectors.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    fn apply_vec(&self, v: &Vector) -> Vector {
        let mut y = v.clone();
        for (z, &lambda) in self.vectors.iter().zip(&self.values) {
            let ratio = self.theta / lambda;
            let factor = if self.sqrt { ratio.sqrt() } else { ratio };
            y.axpy(-(1.0 - factor) * z.dot(v), z, 1.0);
        }
        y
    }
}

impl LinearOperator for SpectralLmp {
    fn domain_dim(&self) -> usize {
        self.n
    }
    fn codomain_dim(&self) -> usize {
        self.n
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        self.apply_vec(v)
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        Some(self.apply_vec(w))
    }
    fn label(&self) -> &str {
        if self.sqrt {
            "spectral-lmp-sqrt"
        } else {
            "spectral-lmp"
        }
    }
}

/// Inexact spectral LMP from the Ritz pairs of a PCG report.
///
/// Only pairs whose estimate is at most `threshold` times the largest Ritz
/// value are used; with none the result is the identity.
pub fn build_ritz_lmp(report: &SolveReport, n: usize, theta: f64, threshold: f64) -> Result<SpectralLmp> {
    let top = report.ritz.iter().map(|p| p.value.abs()).fold(0.0, f64::max);
    let pairs: Vec<(f64, Vector)> = report
        .ritz
        .iter()
        .filter(|p| p.estimate <= threshold * top && p.value > 0.0)
        .map(|p| (p.value, p.vector.clone()))
        .collect();
    if pairs.is_empty() {
        return Ok(SpectralLmp::identity(n));
    }
    SpectralLmp::new(n, &pairs, theta)
}

/// General LMP with the Ritz vectors as `Z`.
pub fn ritz_lmp(a: &dyn LinearOperator, pairs: &[RitzPair], theta: f64) -> Result<Lmp> {
    let z: Vec<Vector> = pairs.iter().map(|p| p.vector.clone()).collect();
    Lmp::new(a, &z, theta)
}

/// Quasi-Newton LMP: the general LMP with the PCG search directions as `Z`.
pub fn build_qn_lmp(dirs: &SearchDirections, n: usize, theta: f64) -> Result<Lmp> {
    Lmp::with_products(n, &dirs.p, &dirs.ap, theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaMode {
    Unit,
    ConditionMin,
}

/// Chooses `θ` from Ritz values sorted in decreasing order, of which the
/// first `targeted` are deflated by the LMP.
///
/// The untargeted spectrum is estimated by the remaining Ritz values
/// together with 1, the lower end of the first-level spectrum. In
/// condition-min mode `θ` is scanned over log-spaced candidates in
/// `[1, max untargeted]`, minimising `max(θ, hi) / min(θ, lo)`; ties keep the
/// smallest candidate.
pub fn choose_theta(ritz_values: &[f64], targeted: usize, mode: ThetaMode) -> f64 {
    if mode == ThetaMode::Unit || ritz_values.is_empty() {
        return 1.0;
    }
    let untargeted = &ritz_values[targeted.min(ritz_values.len())..];
    let hi = untargeted.iter().copied().fold(1.0, f64::max);
    let lo = untargeted.iter().copied().filter(|v| *v > 0.0).fold(1.0, f64::min);
    if hi <= 1.0 {
        return 1.0;
    }
    let kappa = |t: f64| t.max(hi) / t.min(lo);
    let mut best = (1.0, kappa(1.0));
    for i in 1..THETA_SCAN_POINTS {
        let t = hi.powf(i as f64 / (THETA_SCAN_POINTS - 1) as f64);
        let k = kappa(t);
        if k < best.1 {
            best = (t, k);
        }
    }
    best.0
}
