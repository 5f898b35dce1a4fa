//! The Gauss–Newton inner subproblem.
//!
//! Every formulation is written as the weighted least-squares problem
//! `min_s ½ ‖b − J s‖²_{W⁻¹}` with `J = [Obs; F⁻¹]`, `b = (d, f)` and
//! `W = blockdiag(R, D)`. For strong problems `Obs = G`, `F = I` and `D = B`;
//! for weak problems `Obs = blockdiag(H_i)`, `F` couples the TLMs and
//! `D = blockdiag(B, Q_1, .., Q_N)`.

use std::sync::Arc;

use super::{AssimilationSetup, Formulation};
use crate::error::{check_dim, Result};
use crate::models::propagate;
use crate::operators::{
    split_blocks, stack_blocks, BlockDiagSpd, LinearOperator, Operator, SpdAction, SpdOperator,
    SpdView, TimeCoupling, Vector,
};

#[derive(Clone)]
pub struct InnerSubproblem {
    formulation: Formulation,
    reference: Vec<Vector>,
    innovations: Vector,
    misfit: Vector,
    obs_dims: Vec<usize>,
    obs_jacobians: Vec<Operator>,
    tlms: Vec<Operator>,
    coupling: TimeCoupling,
    b: Arc<dyn SpdOperator>,
    r: Arc<dyn SpdOperator>,
    d_cov: Arc<dyn SpdOperator>,
}

impl InnerSubproblem {
    pub(super) fn build(setup: &AssimilationSetup, x: &Vector) -> Result<Self> {
        let n = setup.state_dim();
        let big_n = setup.num_windows();
        let model = setup.model();
        let reference = match setup.formulation() {
            Formulation::Strong => {
                check_dim("initial state", n, x.len())?;
                propagate(model.as_ref(), x, big_n)?
            }
            Formulation::Weak => setup.split_trajectory(x)?,
        };

        let mut innovations = Vec::with_capacity(big_n + 1);
        let mut obs_jacobians = Vec::with_capacity(big_n + 1);
        for (w, xi) in setup.windows().iter().zip(&reference) {
            let hx = w.operator.observe(xi)?;
            crate::models::ensure_finite(&hx, w.operator.name())?;
            innovations.push(&w.y - hx);
            obs_jacobians.push(w.operator.linearize(xi)?);
        }
        let tlms = reference[..big_n]
            .iter()
            .map(|xi| model.linearize(xi))
            .collect::<Result<Vec<_>>>()?;

        let background_misfit = setup.background() - &reference[0];
        let (misfit, coupling, d_cov): (Vector, TimeCoupling, Arc<dyn SpdOperator>) =
            match setup.formulation() {
                Formulation::Strong => (
                    background_misfit,
                    TimeCoupling::trivial(n),
                    setup.b().clone(),
                ),
                Formulation::Weak => {
                    let mut blocks = vec![background_misfit];
                    for i in 1..=big_n {
                        blocks.push(model.step(&reference[i - 1])? - &reference[i]);
                    }
                    let mut covs = vec![setup.b().clone()];
                    covs.extend(setup.model_error().iter().cloned());
                    (
                        stack_blocks(&blocks),
                        TimeCoupling::new(n, big_n, tlms.clone())?,
                        Arc::new(BlockDiagSpd::new(covs)),
                    )
                }
            };
        let r: Arc<dyn SpdOperator> = Arc::new(BlockDiagSpd::new(
            setup.windows().iter().map(|w| w.r.clone()).collect(),
        ));

        Ok(InnerSubproblem {
            formulation: setup.formulation(),
            reference,
            innovations: stack_blocks(&innovations),
            misfit,
            obs_dims: setup.obs_dims(),
            obs_jacobians,
            tlms,
            coupling,
            b: setup.b().clone(),
            r,
            d_cov,
        })
    }

    pub fn formulation(&self) -> Formulation {
        self.formulation
    }
    pub fn state_dim(&self) -> usize {
        self.coupling.state_dim()
    }
    pub fn num_windows(&self) -> usize {
        self.tlms.len()
    }
    /// Length of `s`: `n` (strong) or `p = n (N+1)` (weak).
    pub fn control_dim(&self) -> usize {
        self.coupling.stacked_dim()
    }
    /// Total number of observations `m`.
    pub fn obs_dim(&self) -> usize {
        self.innovations.len()
    }
    pub fn obs_dims(&self) -> &[usize] {
        &self.obs_dims
    }
    /// Reference trajectory `x_0^{(k)}, .., x_N^{(k)}`.
    pub fn reference(&self) -> &[Vector] {
        &self.reference
    }
    /// Reference point in control space.
    pub fn reference_control(&self) -> Vector {
        match self.formulation {
            Formulation::Strong => self.reference[0].clone(),
            Formulation::Weak => stack_blocks(&self.reference),
        }
    }
    /// Stacked innovations `d`.
    pub fn innovations(&self) -> &Vector {
        &self.innovations
    }
    /// `f`: `x_b − x_0` (strong) or `(x_b − x_0, c_1, .., c_N)` (weak).
    pub fn misfit(&self) -> &Vector {
        &self.misfit
    }
    pub fn coupling(&self) -> &TimeCoupling {
        &self.coupling
    }
    pub fn tlms(&self) -> &[Operator] {
        &self.tlms
    }
    pub fn obs_jacobians(&self) -> &[Operator] {
        &self.obs_jacobians
    }
    pub fn b(&self) -> &Arc<dyn SpdOperator> {
        &self.b
    }
    /// Stacked observation-error covariance `R`.
    pub fn r(&self) -> &Arc<dyn SpdOperator> {
        &self.r
    }
    /// `D`: `B` (strong) or `blockdiag(B, Q_1, .., Q_N)` (weak).
    pub fn d_cov(&self) -> &Arc<dyn SpdOperator> {
        &self.d_cov
    }

    /// `G = (H_0, H_1 M_1, .., H_N M_N ⋯ M_1)` from the frozen Jacobians.
    pub fn g_operator(&self) -> Operator {
        Operator::new(GOperator {
            n: self.state_dim(),
            m: self.obs_dim(),
            obs_dims: self.obs_dims.clone(),
            obs: self.obs_jacobians.clone(),
            tlms: self.tlms.clone(),
        })
    }

    /// `blockdiag(H_0, .., H_N)`, mapping a stacked trajectory to observations.
    pub fn h_block(&self) -> Result<Operator> {
        Operator::block_diag(&self.obs_jacobians)
    }

    /// Observation part of `J`: `G` (strong) or `H` (weak).
    pub fn obs_operator(&self) -> Result<Operator> {
        match self.formulation {
            Formulation::Strong => Ok(self.g_operator()),
            Formulation::Weak => self.h_block(),
        }
    }

    /// Observation operator in forcing variables: `Obs ∘ F`.
    pub fn forcing_obs_operator(&self) -> Result<Operator> {
        match self.formulation {
            Formulation::Strong => Ok(self.g_operator()),
            Formulation::Weak => self.h_block()?.compose(&self.coupling.f_op()),
        }
    }

    /// `J = [Obs; F⁻¹]`.
    pub fn jacobian(&self) -> Result<Operator> {
        Operator::vstack(&[self.obs_operator()?, self.coupling.f_inverse_op()])
    }

    /// `b = (d, f)`.
    pub fn rhs(&self) -> Vector {
        stack_blocks(&[self.innovations.clone(), self.misfit.clone()])
    }

    /// `W = blockdiag(R, D)`.
    pub fn weight(&self) -> Arc<dyn SpdOperator> {
        Arc::new(BlockDiagSpd::new(vec![self.r.clone(), self.d_cov.clone()]))
    }

    pub fn r_inverse_op(&self) -> Operator {
        SpdView::operator(&self.r, SpdAction::Inverse)
    }

    pub fn d_inverse_op(&self) -> Operator {
        SpdView::operator(&self.d_cov, SpdAction::Inverse)
    }

    /// `½‖d − Obs s‖²_{R⁻¹} + ½‖f − F⁻¹ s‖²_{D⁻¹}`.
    pub fn quadratic_cost(&self, s: &Vector) -> Result<f64> {
        check_dim("increment", self.control_dim(), s.len())?;
        let obs = self.obs_operator()?;
        let ro = &self.innovations - obs.apply(s)?;
        let rb = &self.misfit - self.coupling.f_inverse_apply(s)?;
        Ok(0.5 * self.r.inverse_norm_sq(&ro) + 0.5 * self.d_cov.inverse_norm_sq(&rb))
    }

    /// Gradient of [`quadratic_cost`](Self::quadratic_cost).
    pub fn quadratic_gradient(&self, s: &Vector) -> Result<Vector> {
        check_dim("increment", self.control_dim(), s.len())?;
        let obs = self.obs_operator()?;
        let ro = &self.innovations - obs.apply(s)?;
        let rb = &self.misfit - self.coupling.f_inverse_apply(s)?;
        let go = obs.apply_adjoint(&self.r.inverse_apply(&ro))?;
        let gb = self
            .coupling
            .f_inverse_transpose_apply(&self.d_cov.inverse_apply(&rb))?;
        Ok(-(go + gb))
    }
}

struct GOperator {
    n: usize,
    m: usize,
    obs_dims: Vec<usize>,
    obs: Vec<Operator>,
    tlms: Vec<Operator>,
}

impl LinearOperator for GOperator {
    fn domain_dim(&self) -> usize {
        self.n
    }
    fn codomain_dim(&self) -> usize {
        self.m
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        let mut x = v.clone();
        let mut out = Vec::with_capacity(self.obs.len());
        out.push(self.obs[0].apply_unchecked(&x));
        for (m, h) in self.tlms.iter().zip(&self.obs[1..]) {
            x = m.apply_unchecked(&x);
            out.push(h.apply_unchecked(&x));
        }
        stack_blocks(&out)
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        let blocks = split_blocks(w, &self.obs_dims);
        let last = self.obs.len() - 1;
        let mut lambda = self.obs[last].try_adjoint_unchecked(&blocks[last])?;
        for i in (0..last).rev() {
            lambda = self.tlms[i].try_adjoint_unchecked(&lambda)?
                + self.obs[i].try_adjoint_unchecked(&blocks[i])?;
        }
        Some(lambda)
    }
    fn label(&self) -> &str {
        "G"
    }
}
