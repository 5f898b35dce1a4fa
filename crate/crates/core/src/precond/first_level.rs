//! Control-variable transform by a factor of the prior covariance.
//!
//! With `D = D₁ D₁ᵀ` (`D = B = U Uᵀ` for strong problems) and the forcing
//! observation map `Hc` (`G` for strong problems), substituting `v = D₁ z`
//! turns the primal normal equations into
//! `(I + D₁ᵀ Hcᵀ R⁻¹ Hc D₁) z = D₁⁻¹ f + D₁ᵀ Hcᵀ R⁻¹ d` with `s = F D₁ z`.
//! The quadratic cost in `z` is `J(0) + ½ zᵀ A z − bᵀ z`.

use crate::error::Result;
use crate::operators::{LinearOperator, Operator, SpdAction, SpdView};
use crate::problem::{AssemblySystem, Formulation, InnerSubproblem, Recovery, SystemForm};

/// Transformed strong-primal (`A_S`) or weak-forcing (`A_F`) system.
pub fn first_level(sub: &InnerSubproblem) -> Result<AssemblySystem> {
    let d_cov = sub.d_cov();
    let factor = SpdView::operator(d_cov, SpdAction::Factor);
    let hc = sub.forcing_obs_operator()?;
    let hd = hc.compose(&factor)?;
    let hdt = hd.transpose()?;
    let rinv = sub.r_inverse_op();
    let p = sub.control_dim();
    let operator = Operator::identity(p)
        .add(&Operator::chain(&[hdt.clone(), rinv.clone(), hd])?)?
        .with_label("first-level");
    let rhs = d_cov.factor_inverse_apply(sub.misfit()) + hdt.apply(&rinv.apply(sub.innovations())?)?;
    let map = sub.coupling().f_op().compose(&factor)?;
    let form = match sub.formulation() {
        Formulation::Strong => SystemForm::StrongPrimal,
        Formulation::Weak => SystemForm::WeakForcing,
    };
    Ok(AssemblySystem {
        form,
        operator,
        rhs,
        recovery: Recovery {
            offset: crate::operators::Vector::zeros(p),
            map,
        },
    })
}
