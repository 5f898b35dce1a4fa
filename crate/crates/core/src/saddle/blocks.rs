use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::operators::{
    materialize_dense, split_blocks, stack_blocks, DenseSpd, LinearOperator, Operator, SpdAction,
    SpdOperator, SpdView, TimeCoupling, Vector, DEFAULT_ORACLE_CAP,
};
use crate::precond::{ftilde_coupling, ftilde_factor, ftilde_preconditioner, FtildeChoice};
use crate::problem::{Formulation, InnerSubproblem, SystemForm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchurKind {
    Ftilde,
    LmpComposed,
    ExactDense,
}

/// An SPD approximation `S̃⁻¹` of the inverse Schur complement.
#[derive(Clone)]
pub struct SchurApprox {
    inverse: Operator,
    kind: SchurKind,
}

impl SchurApprox {
    pub fn from_operator(inverse: Operator, kind: SchurKind) -> Result<Self> {
        check_dim("Schur approximation", inverse.domain_dim(), inverse.codomain_dim())?;
        Ok(SchurApprox { inverse, kind })
    }

    /// `S̃⁻¹ = F̃ D F̃ᵀ`.
    pub fn ftilde(sub: &InnerSubproblem, choice: FtildeChoice) -> Result<Self> {
        Self::from_operator(ftilde_preconditioner(choice, sub)?, SchurKind::Ftilde)
    }

    /// `S̃⁻¹ = U P U ᵀ` with `U = F̃ D^{1/2}` and `P` a preconditioner for
    /// `Uᵀ S U` (see [`SchurApprox::transformed_schur`]).
    pub fn lmp_composed(sub: &InnerSubproblem, choice: FtildeChoice, second: Operator) -> Result<Self> {
        let u = ftilde_factor(choice, sub)?;
        let inverse = Operator::chain(&[u.clone(), second, u.transpose()?])?;
        Self::from_operator(inverse, SchurKind::LmpComposed)
    }

    /// `Uᵀ S U`, the operator a second-level preconditioner for
    /// [`SchurApprox::lmp_composed`] is built on.
    pub fn transformed_schur(sub: &InnerSubproblem, choice: FtildeChoice) -> Result<Operator> {
        let u = ftilde_factor(choice, sub)?;
        Operator::chain(&[u.transpose()?, schur_operator(sub)?, u])
    }

    /// Dense inverse of the exact Schur complement; small problems only.
    pub fn exact_dense(sub: &InnerSubproblem) -> Result<Self> {
        let s = materialize_dense(&schur_operator(sub)?, DEFAULT_ORACLE_CAP)?;
        let s = (&s + s.transpose()) * 0.5;
        let spd: Arc<dyn SpdOperator> = Arc::new(DenseSpd::from_matrix(s)?);
        Self::from_operator(SpdView::operator(&spd, SpdAction::Inverse), SchurKind::ExactDense)
    }

    pub fn kind(&self) -> SchurKind {
        self.kind
    }

    pub fn inverse(&self) -> &Operator {
        &self.inverse
    }
}

/// `S = F⁻ᵀ D⁻¹ F⁻¹ + Obsᵀ R⁻¹ Obs`, i.e. the primal normal-equation operator.
pub fn schur_operator(sub: &InnerSubproblem) -> Result<Operator> {
    let form = match sub.formulation() {
        Formulation::Strong => SystemForm::StrongPrimal,
        Formulation::Weak => SystemForm::WeakState,
    };
    Ok(sub.assemble_normal(form)?.operator)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockVariant {
    /// `blockdiag(R, D, S̃)`.
    Pd,
    /// `[[R, 0, Obs], [0, D, F⁻¹], [0, 0, S̃]]`.
    Pt,
    /// `[[R, 0, 0], [0, D, F̃⁻¹], [0, F̃⁻ᵀ, 0]]`.
    Pc,
}

/// A block preconditioner `P` for `K`; applying it computes `P⁻¹ v`.
#[derive(Clone)]
pub struct BlockPreconditioner {
    variant: BlockVariant,
    m: usize,
    p: usize,
    r: Arc<dyn SpdOperator>,
    d: Arc<dyn SpdOperator>,
    schur: Option<SchurApprox>,
    obs: Option<Operator>,
    finv: Option<Operator>,
    ft: Option<Operator>,
}

impl BlockPreconditioner {
    pub fn diagonal(r: Arc<dyn SpdOperator>, d: Arc<dyn SpdOperator>, schur: SchurApprox) -> Result<Self> {
        check_dim("Schur approximation", d.dim(), schur.inverse.domain_dim())?;
        Ok(BlockPreconditioner {
            variant: BlockVariant::Pd,
            m: r.dim(),
            p: d.dim(),
            r,
            d,
            schur: Some(schur),
            obs: None,
            finv: None,
            ft: None,
        })
    }

    pub fn triangular(
        r: Arc<dyn SpdOperator>,
        d: Arc<dyn SpdOperator>,
        schur: SchurApprox,
        obs: Operator,
        finv: Operator,
    ) -> Result<Self> {
        let mut pre = Self::diagonal(r, d, schur)?;
        check_dim("Obs codomain", pre.m, obs.codomain_dim())?;
        check_dim("Obs domain", pre.p, obs.domain_dim())?;
        check_dim("F⁻¹", pre.p, finv.domain_dim())?;
        if !obs.has_adjoint() || !finv.has_adjoint() {
            return Err(Error::NoAdjoint("block-triangular preconditioner".into()));
        }
        pre.variant = BlockVariant::Pt;
        pre.obs = Some(obs);
        pre.finv = Some(finv);
        Ok(pre)
    }

    /// `F̃` is block unit lower triangular and therefore always invertible.
    pub fn constraint(r: Arc<dyn SpdOperator>, d: Arc<dyn SpdOperator>, ftilde: &TimeCoupling) -> Result<Self> {
        check_dim("F̃", d.dim(), ftilde.stacked_dim())?;
        Ok(BlockPreconditioner {
            variant: BlockVariant::Pc,
            m: r.dim(),
            p: d.dim(),
            r,
            d,
            schur: None,
            obs: None,
            finv: None,
            ft: Some(ftilde.f_op()),
        })
    }

    /// Builds `variant` for `sub`. `schur` is used by `P_D` and `P_T`, `choice`
    /// by `P_C`.
    pub fn for_subproblem(
        variant: BlockVariant,
        sub: &InnerSubproblem,
        schur: SchurApprox,
        choice: FtildeChoice,
    ) -> Result<Self> {
        let (r, d) = (sub.r().clone(), sub.d_cov().clone());
        match variant {
            BlockVariant::Pd => Self::diagonal(r, d, schur),
            BlockVariant::Pt => Self::triangular(r, d, schur, sub.obs_operator()?, sub.coupling().f_inverse_op()),
            BlockVariant::Pc => Self::constraint(r, d, &ftilde_coupling(choice, sub)?),
        }
    }

    pub fn variant(&self) -> BlockVariant {
        self.variant
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m, self.p)
    }

    fn split(&self, v: &Vector) -> Vec<Vector> {
        split_blocks(v, &[self.m, self.p, self.p])
    }

    fn schur_inv(&self, v: &Vector) -> Vector {
        self.schur.as_ref().expect("P_D and P_T carry S̃").inverse.apply_unchecked(v)
    }

    /// `P⁻¹ v`.
    pub fn apply_inverse(&self, v: &Vector) -> Result<Vector> {
        check_dim("block preconditioner input", self.m + 2 * self.p, v.len())?;
        Ok(self.inverse_unchecked(v))
    }

    fn inverse_unchecked(&self, v: &Vector) -> Vector {
        let b = self.split(v);
        let out = match self.variant {
            BlockVariant::Pd => vec![
                self.r.inverse_apply(&b[0]),
                self.d.inverse_apply(&b[1]),
                self.schur_inv(&b[2]),
            ],
            BlockVariant::Pt => {
                let x3 = self.schur_inv(&b[2]);
                let obs = self.obs.as_ref().unwrap();
                let finv = self.finv.as_ref().unwrap();
                vec![
                    self.r.inverse_apply(&(&b[0] - obs.apply_unchecked(&x3))),
                    self.d.inverse_apply(&(&b[1] - finv.apply_unchecked(&x3))),
                    x3,
                ]
            }
            BlockVariant::Pc => {
                let ft = self.ft.as_ref().unwrap();
                let ftt_c = ft.try_adjoint_unchecked(&b[2]).unwrap();
                let x3 = ft.apply_unchecked(&(&b[1] - self.d.apply_unchecked(&ftt_c)));
                vec![self.r.inverse_apply(&b[0]), ftt_c, x3]
            }
        };
        stack_blocks(&out)
    }

    fn inverse_transpose_unchecked(&self, v: &Vector) -> Vector {
        if self.variant != BlockVariant::Pt {
            return self.inverse_unchecked(v);
        }
        let b = self.split(v);
        let y1 = self.r.inverse_apply(&b[0]);
        let y2 = self.d.inverse_apply(&b[1]);
        let obs = self.obs.as_ref().unwrap();
        let finv = self.finv.as_ref().unwrap();
        let c = &b[2] - obs.try_adjoint_unchecked(&y1).unwrap() - finv.try_adjoint_unchecked(&y2).unwrap();
        let y3 = self.schur_inv(&c);
        stack_blocks(&[y1, y2, y3])
    }
}

impl LinearOperator for BlockPreconditioner {
    fn domain_dim(&self) -> usize {
        self.m + 2 * self.p
    }
    fn codomain_dim(&self) -> usize {
        self.m + 2 * self.p
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        self.inverse_unchecked(v)
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        Some(self.inverse_transpose_unchecked(w))
    }
    fn label(&self) -> &str {
        match self.variant {
            BlockVariant::Pd => "P_D⁻¹",
            BlockVariant::Pt => "P_T⁻¹",
            BlockVariant::Pc => "P_C⁻¹",
        }
    }
}
