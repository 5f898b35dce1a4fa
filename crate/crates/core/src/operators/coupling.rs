//! Time coupling of a window of tangent-linear steps.
//!
//! Stacked vectors are time-major: block `i` occupies `i*n..(i+1)*n`.
//! `F⁻¹` is bidiagonal with blocks `I` and `-M_i`, so its action only couples
//! neighbouring blocks and every output block can be computed independently.
//! `F` itself is a forward substitution and is sequential over time.

use rayon::prelude::*;

use super::{split_blocks, stack_blocks, LinearOperator, Operator, Vector};
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug)]
pub struct TimeCoupling {
    n: usize,
    steps: Vec<Operator>,
}

impl TimeCoupling {
    /// `steps[i-1]` is `M_i`, the tangent-linear step from `t_{i-1}` to `t_i`.
    pub fn new(n: usize, windows: usize, steps: Vec<Operator>) -> Result<Self> {
        if steps.len() != windows {
            return Err(Error::InvalidParameter(format!(
                "time coupling over {windows} windows needs {windows} steps, got {}",
                steps.len()
            )));
        }
        for (i, m) in steps.iter().enumerate() {
            check_dim(&format!("M_{} domain", i + 1), n, m.domain_dim())?;
            check_dim(&format!("M_{} codomain", i + 1), n, m.codomain_dim())?;
            if !m.has_adjoint() {
                return Err(Error::NoAdjoint(format!("M_{}", i + 1)));
            }
        }
        Ok(TimeCoupling { n, steps })
    }

    /// A single time level: `F = F⁻¹ = I_n`.
    pub fn trivial(n: usize) -> Self {
        TimeCoupling {
            n,
            steps: Vec::new(),
        }
    }

    /// Every `M_i` replaced by the same block.
    pub fn constant(n: usize, windows: usize, block: Operator) -> Result<Self> {
        Self::new(n, windows, vec![block; windows])
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn windows(&self) -> usize {
        self.steps.len()
    }

    pub fn stacked_dim(&self) -> usize {
        self.n * (self.steps.len() + 1)
    }

    pub fn steps(&self) -> &[Operator] {
        &self.steps
    }

    fn blocks(&self, v: &Vector) -> Result<Vec<Vector>> {
        check_dim("time-coupled stacked vector", self.stacked_dim(), v.len())?;
        Ok(split_blocks(v, &vec![self.n; self.windows() + 1]))
    }

    /// `F v` by forward substitution: `w_0 = v_0`, `w_i = v_i + M_i w_{i-1}`.
    pub fn f_apply(&self, v: &Vector) -> Result<Vector> {
        let blocks = self.blocks(v)?;
        let mut out = Vec::with_capacity(blocks.len());
        out.push(blocks[0].clone());
        for (i, m) in self.steps.iter().enumerate() {
            let next = &blocks[i + 1] + m.apply_unchecked(&out[i]);
            out.push(next);
        }
        Ok(stack_blocks(&out))
    }

    /// `F⁻¹ v`: `w_0 = v_0`, `w_i = v_i - M_i v_{i-1}`, blocks evaluated in parallel.
    pub fn f_inverse_apply(&self, v: &Vector) -> Result<Vector> {
        let blocks = self.blocks(v)?;
        let out: Vec<Vector> = (0..blocks.len())
            .into_par_iter()
            .map(|i| {
                if i == 0 {
                    blocks[0].clone()
                } else {
                    &blocks[i] - self.steps[i - 1].apply_unchecked(&blocks[i - 1])
                }
            })
            .collect();
        Ok(stack_blocks(&out))
    }

    /// `Fᵀ v` by backward substitution: `w_N = v_N`, `w_i = v_i + M_{i+1}ᵀ w_{i+1}`.
    pub fn f_transpose_apply(&self, v: &Vector) -> Result<Vector> {
        let blocks = self.blocks(v)?;
        let big_n = self.windows();
        let mut out = vec![Vector::zeros(self.n); big_n + 1];
        out[big_n] = blocks[big_n].clone();
        for i in (0..big_n).rev() {
            let carried = self.steps[i]
                .try_adjoint_unchecked(&out[i + 1])
                .expect("coupling steps carry adjoints");
            out[i] = &blocks[i] + carried;
        }
        Ok(stack_blocks(&out))
    }

    /// `F⁻ᵀ v`: `w_i = v_i - M_{i+1}ᵀ v_{i+1}` for `i < N`, `w_N = v_N`.
    pub fn f_inverse_transpose_apply(&self, v: &Vector) -> Result<Vector> {
        let blocks = self.blocks(v)?;
        let big_n = self.windows();
        let out: Vec<Vector> = (0..=big_n)
            .into_par_iter()
            .map(|i| {
                if i == big_n {
                    blocks[i].clone()
                } else {
                    let carried = self.steps[i]
                        .try_adjoint_unchecked(&blocks[i + 1])
                        .expect("coupling steps carry adjoints");
                    &blocks[i] - carried
                }
            })
            .collect();
        Ok(stack_blocks(&out))
    }

    /// `F` as an operator (adjoint `Fᵀ`).
    pub fn f_op(&self) -> Operator {
        Operator::new(CouplingOp {
            coupling: self.clone(),
            inverse: false,
        })
    }

    /// `F⁻¹` as an operator (adjoint `F⁻ᵀ`).
    pub fn f_inverse_op(&self) -> Operator {
        Operator::new(CouplingOp {
            coupling: self.clone(),
            inverse: true,
        })
    }
}

struct CouplingOp {
    coupling: TimeCoupling,
    inverse: bool,
}

impl LinearOperator for CouplingOp {
    fn domain_dim(&self) -> usize {
        self.coupling.stacked_dim()
    }
    fn codomain_dim(&self) -> usize {
        self.coupling.stacked_dim()
    }
    fn apply_unchecked(&self, v: &Vector) -> Vector {
        let out = if self.inverse {
            self.coupling.f_inverse_apply(v)
        } else {
            self.coupling.f_apply(v)
        };
        out.expect("dimension checked by caller")
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn try_adjoint_unchecked(&self, w: &Vector) -> Option<Vector> {
        let out = if self.inverse {
            self.coupling.f_inverse_transpose_apply(w)
        } else {
            self.coupling.f_transpose_apply(w)
        };
        out.ok()
    }
    fn label(&self) -> &str {
        if self.inverse {
            "F-inverse"
        } else {
            "F"
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{materialize_dense, Matrix, DEFAULT_ORACLE_CAP};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_coupling(n: usize, windows: usize, seed: u64, radius: f64) -> (TimeCoupling, Vec<Matrix>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mats: Vec<Matrix> = (0..windows)
            .map(|_| {
                let m = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
                // Spectral radius bounded by the Frobenius norm.
                let scale = radius / m.norm().max(1e-300);
                m * scale
            })
            .collect();
        let ops = mats.iter().cloned().map(Operator::dense).collect();
        (TimeCoupling::new(n, windows, ops).unwrap(), mats)
    }

    fn dense_f(mats: &[Matrix], n: usize) -> Matrix {
        let big_n = mats.len();
        let p = n * (big_n + 1);
        let mut f = Matrix::identity(p, p);
        for j in 0..=big_n {
            // Column block j: M_{j+1,i} products for rows i > j.
            let mut prod = Matrix::identity(n, n);
            for i in (j + 1)..=big_n {
                prod = &mats[i - 1] * prod;
                f.view_mut((i * n, j * n), (n, n)).copy_from(&prod);
            }
        }
        f
    }

    #[test]
    fn scalar_examples() {
        let tc = TimeCoupling::new(1, 1, vec![Operator::dense(Matrix::from_element(1, 1, 2.0))]).unwrap();
        let v = Vector::from_vec(vec![1.0, 1.0]);
        assert_eq!(tc.f_inverse_apply(&v).unwrap(), Vector::from_vec(vec![1.0, -1.0]));
        assert_eq!(
            tc.f_apply(&Vector::from_vec(vec![1.0, -1.0])).unwrap(),
            Vector::from_vec(vec![1.0, 1.0])
        );
    }

    #[test]
    fn zero_steps_give_identity() {
        let tc = TimeCoupling::constant(3, 2, Operator::zero(3, 3)).unwrap();
        let v = Vector::from_fn(9, |i, _| i as f64);
        assert_eq!(tc.f_apply(&v).unwrap(), v);
        assert_eq!(tc.f_inverse_apply(&v).unwrap(), v);
    }

    #[test]
    fn missing_step_rejected() {
        let err = TimeCoupling::new(2, 3, vec![Operator::identity(2); 2]).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn inverse_materializes_to_bidiagonal() {
        let tc = TimeCoupling::constant(1, 2, Operator::identity(1)).unwrap();
        let m = materialize_dense(&tc.f_inverse_op(), DEFAULT_ORACLE_CAP).unwrap();
        let expected = Matrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, -1.0, 1.0]);
        assert_eq!(m, expected);
    }

    #[test]
    fn matches_dense_f_with_products() {
        let (tc, mats) = random_coupling(5, 3, 9, 1.5);
        let f = dense_f(&mats, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let v = Vector::from_fn(20, |_, _| rng.gen_range(-1.0..1.0));
        let diff = (tc.f_apply(&v).unwrap() - &f * &v).norm();
        assert!(diff <= 1e-12 * (&f * &v).norm(), "diff {diff}");
        let diff_t = (tc.f_transpose_apply(&v).unwrap() - f.transpose() * &v).norm();
        assert!(diff_t <= 1e-12 * v.norm() * f.norm());
        let finv = f.clone().try_inverse().unwrap();
        let diff_inv = (tc.f_inverse_apply(&v).unwrap() - &finv * &v).norm();
        assert!(diff_inv <= 1e-10 * v.norm());
    }

    #[test]
    fn block_independence() {
        let (tc, _) = random_coupling(3, 4, 2, 1.0);
        let v = Vector::from_fn(15, |i, _| (i as f64).sin());
        let base_inv = tc.f_inverse_apply(&v).unwrap();
        let base_f = tc.f_apply(&v).unwrap();
        for j in 0..5 {
            let mut w = v.clone();
            w[j * 3 + 1] += 1.0;
            let d_inv = tc.f_inverse_apply(&w).unwrap() - &base_inv;
            let d_f = tc.f_apply(&w).unwrap() - &base_f;
            for b in 0..5 {
                let changed_inv = d_inv.rows(b * 3, 3).norm() > 0.0;
                let changed_f = d_f.rows(b * 3, 3).norm() > 0.0;
                assert_eq!(changed_inv && !(b == j || b == j + 1), false);
                assert_eq!(changed_f && b < j, false);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip(seed in 0u64..1000, n in 1usize..6, windows in 0usize..5) {
            let (tc, _) = random_coupling(n, windows, seed, 2.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let v = Vector::from_fn(tc.stacked_dim(), |_, _| rng.gen_range(-1.0..1.0));
            let a = tc.f_apply(&tc.f_inverse_apply(&v).unwrap()).unwrap();
            let b = tc.f_inverse_apply(&tc.f_apply(&v).unwrap()).unwrap();
            prop_assert!((a - &v).norm() <= 1e-12 * v.norm().max(1.0));
            prop_assert!((b - &v).norm() <= 1e-12 * v.norm().max(1.0));
            let w = Vector::from_fn(tc.stacked_dim(), |_, _| rng.gen_range(-1.0..1.0));
            for op in [tc.f_op(), tc.f_inverse_op()] {
                let lhs = op.apply(&v).unwrap().dot(&w);
                let rhs = v.dot(&op.apply_adjoint(&w).unwrap());
                prop_assert!((lhs - rhs).abs() <= 1e-12 * op.apply(&v).unwrap().norm().max(1.0) * w.norm());
            }
        }
    }
}
