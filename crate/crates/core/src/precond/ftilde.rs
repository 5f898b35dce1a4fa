//! Preconditioners for the weak-state system built from an approximate
//! coupling `F̃`, in which every tangent-linear step `M_i` is replaced by a
//! cheap constant block.
//!
//! The action `F̃ D F̃ᵀ` is the exact inverse of `F̃⁻ᵀ D⁻¹ F̃⁻¹`, the
//! approximation of the model-error term of `𝔸_W`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::operators::{Operator, SpdAction, SpdView, TimeCoupling};
use crate::problem::{Formulation, InnerSubproblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FtildeChoice {
    /// `M̃_i = 0`, so `F̃ = I`.
    Zero,
    /// `M̃_i = I`.
    Identity,
    /// `M̃_i = M_i`, i.e. `F̃ = F`.
    Exact,
}

pub fn ftilde_coupling(choice: FtildeChoice, sub: &InnerSubproblem) -> Result<TimeCoupling> {
    let n = sub.state_dim();
    let windows = sub.num_windows();
    if sub.formulation() == Formulation::Strong {
        return Ok(TimeCoupling::trivial(n));
    }
    match choice {
        FtildeChoice::Zero => TimeCoupling::constant(n, windows, Operator::zero(n, n)),
        FtildeChoice::Identity => TimeCoupling::constant(n, windows, Operator::identity(n)),
        FtildeChoice::Exact => Ok(sub.coupling().clone()),
    }
}

/// `U = F̃ D^{1/2}`, so that `F̃ D F̃ᵀ = U Uᵀ`.
pub fn ftilde_factor(choice: FtildeChoice, sub: &InnerSubproblem) -> Result<Operator> {
    let ft = ftilde_coupling(choice, sub)?.f_op();
    ft.compose(&SpdView::operator(sub.d_cov(), SpdAction::Factor))
}

/// `F̃ D F̃ᵀ` as an operator, for use as a PCG/MINRES preconditioner.
pub fn ftilde_preconditioner(choice: FtildeChoice, sub: &InnerSubproblem) -> Result<Operator> {
    let ft = ftilde_coupling(choice, sub)?.f_op();
    let d = SpdView::operator(sub.d_cov(), SpdAction::Apply);
    Ok(Operator::chain(&[ft.clone(), d, ft.transpose()?])?.with_label("ftilde"))
}
