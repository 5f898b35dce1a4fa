//! Linear systems for one Gauss–Newton step.
//!
//! The dual systems use the forcing form of the problem: with control `v`,
//! prior `D`, misfit `f` and observation map `Hc = Obs ∘ F`, the increment
//! is `s = F v`. Strong problems have `F = I` and `Hc = G`, which gives the
//! classical `(R⁻¹ G B Gᵀ + I) u = R⁻¹ (d − G (x_b − x_0))` with
//! `s = x_b − x_0 + B Gᵀ u`. Weak problems get
//! `(R⁻¹ Hc D Hcᵀ + I) u = R⁻¹ (d − Hc f)` with `s = F f + F D Hcᵀ u`.

use super::{Formulation, InnerSubproblem};
use crate::error::{check_dim, Error, Result};
use crate::operators::{LinearOperator, Operator, SpdAction, SpdView, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemForm {
    StrongPrimal,
    WeakState,
    WeakForcing,
    Dual,
    /// Symmetric dual in the variable `z = U_Rᵀ u`.
    Psas,
    Augmented,
}

/// Affine map `s = offset + map · solution`.
#[derive(Debug, Clone)]
pub struct Recovery {
    pub offset: Vector,
    pub map: Operator,
}

impl Recovery {
    pub fn apply(&self, solution: &Vector) -> Result<Vector> {
        Ok(&self.offset + self.map.apply(solution)?)
    }
}

#[derive(Debug, Clone)]
pub struct AssemblySystem {
    pub form: SystemForm,
    pub operator: Operator,
    pub rhs: Vector,
    pub recovery: Recovery,
}

impl AssemblySystem {
    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    /// Maps a solution of this system to the increment `s`.
    pub fn recover(&self, solution: &Vector) -> Result<Vector> {
        check_dim("system solution", self.dim(), solution.len())?;
        self.recovery.apply(solution)
    }
}

fn spd(sub: &InnerSubproblem, which: char, action: SpdAction) -> Operator {
    let cov = match which {
        'R' => sub.r(),
        _ => sub.d_cov(),
    };
    SpdView::operator(cov, action)
}

impl InnerSubproblem {
    fn require(&self, form: SystemForm, wanted: Formulation) -> Result<()> {
        if self.formulation() != wanted {
            return Err(Error::IncompatibleFormulation(format!(
                "{form:?} system requested for a {:?} problem",
                self.formulation()
            )));
        }
        Ok(())
    }

    /// Normal equations in one of the primal forms.
    pub fn assemble_normal(&self, form: SystemForm) -> Result<AssemblySystem> {
        let p = self.control_dim();
        let d = self.innovations();
        let f = self.misfit();
        let rinv = self.r_inverse_op();
        let dinv = self.d_inverse_op();
        let rinv_d = rinv.apply(d)?;
        match form {
            SystemForm::StrongPrimal => {
                self.require(form, Formulation::Strong)?;
                let g = self.g_operator();
                let gt = g.transpose()?;
                let operator = dinv.add(&Operator::chain(&[gt.clone(), rinv, g])?)?;
                let rhs = dinv.apply(f)? + gt.apply(&rinv_d)?;
                Ok(AssemblySystem {
                    form,
                    operator: operator.with_label("A_S"),
                    rhs,
                    recovery: Recovery {
                        offset: Vector::zeros(p),
                        map: Operator::identity(p),
                    },
                })
            }
            SystemForm::WeakState => {
                self.require(form, Formulation::Weak)?;
                let finv = self.coupling().f_inverse_op();
                let finv_t = finv.transpose()?;
                let h = self.h_block()?;
                let ht = h.transpose()?;
                let operator = Operator::chain(&[finv_t.clone(), dinv.clone(), finv])?
                    .add(&Operator::chain(&[ht.clone(), rinv, h])?)?;
                let rhs = finv_t.apply(&dinv.apply(f)?)? + ht.apply(&rinv_d)?;
                Ok(AssemblySystem {
                    form,
                    operator: operator.with_label("A_W"),
                    rhs,
                    recovery: Recovery {
                        offset: Vector::zeros(p),
                        map: Operator::identity(p),
                    },
                })
            }
            SystemForm::WeakForcing => {
                self.require(form, Formulation::Weak)?;
                let hf = self.forcing_obs_operator()?;
                let hft = hf.transpose()?;
                let operator = dinv.add(&Operator::chain(&[hft.clone(), rinv, hf])?)?;
                let rhs = dinv.apply(f)? + hft.apply(&rinv_d)?;
                Ok(AssemblySystem {
                    form,
                    operator: operator.with_label("A_F"),
                    rhs,
                    recovery: Recovery {
                        offset: Vector::zeros(p),
                        map: self.coupling().f_op(),
                    },
                })
            }
            SystemForm::Dual | SystemForm::Psas => self.assemble_dual(form == SystemForm::Psas),
            SystemForm::Augmented => self.assemble_augmented(),
        }
    }

    /// Dual (observation-space) system; `symmetric` selects the PSAS form.
    pub fn assemble_dual(&self, symmetric: bool) -> Result<AssemblySystem> {
        let m = self.obs_dim();
        if m == 0 {
            return Err(Error::InvalidParameter(
                "no observations: the dual system is empty".into(),
            ));
        }
        let f = self.misfit();
        let hc = self.forcing_obs_operator()?;
        let hct = hc.transpose()?;
        let d_op = spd(self, 'D', SpdAction::Apply);
        let f_op = self.coupling().f_op();
        let residual = self.innovations() - hc.apply(f)?;
        let hdht = Operator::chain(&[hc, d_op.clone(), hct.clone()])?;
        let offset = f_op.apply(f)?;
        let back = Operator::chain(&[f_op, d_op, hct])?;
        let ident = Operator::identity(m);
        let (form, operator, rhs, map) = if symmetric {
            let ui = spd(self, 'R', SpdAction::FactorInverse);
            let uit = spd(self, 'R', SpdAction::FactorInverseTranspose);
            let op = Operator::chain(&[ui.clone(), hdht, uit.clone()])?.add(&ident)?;
            (SystemForm::Psas, op, ui.apply(&residual)?, back.compose(&uit)?)
        } else {
            let rinv = self.r_inverse_op();
            let op = rinv.compose(&hdht)?.add(&ident)?;
            (SystemForm::Dual, op, rinv.apply(&residual)?, back)
        };
        Ok(AssemblySystem {
            form,
            operator: operator.with_label("dual"),
            rhs,
            recovery: Recovery { offset, map },
        })
    }

    /// `K = [[R, 0, Obs], [0, D, F⁻¹], [Obsᵀ, F⁻ᵀ, 0]]` with right-hand side `(d, f, 0)`.
    pub fn assemble_augmented(&self) -> Result<AssemblySystem> {
        let m = self.obs_dim();
        let p = self.control_dim();
        let obs = self.obs_operator()?;
        let finv = self.coupling().f_inverse_op();
        let operator = Operator::blocks(
            vec![m, p, p],
            vec![m, p, p],
            vec![
                vec![Some(spd(self, 'R', SpdAction::Apply)), None, Some(obs.clone())],
                vec![None, Some(spd(self, 'D', SpdAction::Apply)), Some(finv.clone())],
                vec![Some(obs.transpose()?), Some(finv.transpose()?), None],
            ],
        )?;
        let mut rhs = Vector::zeros(m + 2 * p);
        rhs.rows_mut(0, m).copy_from(self.innovations());
        rhs.rows_mut(m, p).copy_from(self.misfit());
        let select = Operator::blocks(
            vec![p],
            vec![m, p, p],
            vec![vec![None, None, Some(Operator::identity(p))]],
        )?;
        Ok(AssemblySystem {
            form: SystemForm::Augmented,
            operator: operator.with_label("K"),
            rhs,
            recovery: Recovery {
                offset: Vector::zeros(p),
                map: select,
            },
        })
    }
}
