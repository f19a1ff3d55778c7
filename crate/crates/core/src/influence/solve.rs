//! Linear solves against a damped Hessian block.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Blocks up to this size are factorized densely; larger ones use CG.
pub const DENSE_LIMIT: usize = 512;
pub const RESIDUAL_TOL: f64 = 1e-10;

/// `H_SS + λI` over the coordinate subset `coords`.
#[derive(Debug, Clone)]
pub struct DampedHessian {
    pub coords: Vec<usize>,
    pub matrix: DMatrix<f64>,
    pub damping: f64,
    /// training-set size the block was normalized by
    pub n: usize,
}

impl DampedHessian {
    pub fn new(coords: Vec<usize>, block: DMatrix<f64>, damping: f64, n: usize) -> Self {
        let m = block.nrows();
        let matrix = block + DMatrix::identity(m, m) * damping;
        Self {
            coords,
            matrix,
            damping,
            n,
        }
    }

    /// `(1/n) (H_SS + λI)^{-1} g_S`: the estimated parameter change from
    /// removing a point whose loss gradient on the block is `grad`.
    pub fn removal_delta(&self, grad: &[f64], dense_limit: usize) -> Result<super::ParamDelta> {
        let x = self.solve_with_limit(grad, dense_limit)?;
        let n = self.n as f64;
        Ok(super::ParamDelta {
            entries: self.coords.iter().copied().zip(x.into_iter().map(|v| v / n)).collect(),
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solve_with_limit(rhs, DENSE_LIMIT)
    }

    pub fn solve_with_limit(&self, rhs: &[f64], dense_limit: usize) -> Result<Vec<f64>> {
        let b = DVector::from_column_slice(rhs);
        let bnorm = b.norm();
        if bnorm == 0.0 {
            return Ok(vec![0.0; rhs.len()]);
        }
        let x = if self.matrix.nrows() <= dense_limit {
            let chol = self.matrix.clone().cholesky().ok_or_else(|| {
                Error::Numeric(format!(
                    "damped Hessian (damping {}) is not positive definite",
                    self.damping
                ))
            })?;
            let mut x = chol.solve(&b);
            // one refinement step keeps the residual at round-off level
            let r = &b - &self.matrix * &x;
            x += chol.solve(&r);
            x
        } else {
            conjugate_gradient(&self.matrix, &b, RESIDUAL_TOL, 10 * self.matrix.nrows())?
        };
        let resid = (&b - &self.matrix * &x).norm() / bnorm;
        if !(resid < RESIDUAL_TOL) {
            return Err(Error::Numeric(format!(
                "damped Hessian solve residual {resid:.3e} above {RESIDUAL_TOL:.0e}"
            )));
        }
        Ok(x.iter().copied().collect())
    }
}

/// Plain CG for a symmetric positive definite system.
pub fn conjugate_gradient(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let bnorm = b.norm();
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    for _ in 0..max_iter {
        if rr.sqrt() <= rel_tol * 0.5 * bnorm {
            return Ok(x);
        }
        let ap = a * &p;
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(Error::Numeric("CG met a non-positive curvature direction".into()));
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_new = r.dot(&r);
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
    }
    // recompute the true residual before giving up
    let resid = (b - a * &x).norm();
    if resid <= rel_tol * bnorm {
        Ok(x)
    } else {
        Err(Error::Numeric(format!(
            "CG did not reach relative residual {rel_tol:.0e} in {max_iter} iterations"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(m, m) * 0.5
    }

    #[test]
    fn dense_and_cg_agree() {
        let block = spd(40, 1);
        let h = DampedHessian::new((0..40).collect(), block, 0.01, 100);
        let rhs: Vec<f64> = (0..40).map(|k| (k as f64).sin()).collect();
        let dense = h.solve(&rhs).unwrap();
        let cg = h.solve_with_limit(&rhs, 10).unwrap();
        for (a, b) in dense.iter().zip(&cg) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn scalar_toy() {
        // H = 2, λ = 0, g = 1 -> x = 0.5
        let h = DampedHessian::new(vec![0], DMatrix::from_element(1, 1, 2.0), 0.0, 4);
        assert_eq!(h.solve(&[1.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn one_parameter_removal() {
        // n = 4, H = 2, λ = 0, g = 1 -> delta = 1 / (4 * 2)
        let h = DampedHessian::new(vec![7], DMatrix::from_element(1, 1, 2.0), 0.0, 4);
        let d = h.removal_delta(&[1.0], DENSE_LIMIT).unwrap();
        assert_eq!(d.entries, vec![(7, 0.125)]);
    }

    #[test]
    fn indefinite_without_damping_fails() {
        let block = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let h = DampedHessian::new(vec![0, 1], block, 0.0, 1);
        assert!(matches!(h.solve(&[1.0, 1.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn zero_rhs_short_circuits() {
        let h = DampedHessian::new(vec![0], DMatrix::from_element(1, 1, -1.0), 0.0, 1);
        assert_eq!(h.solve(&[0.0]).unwrap(), vec![0.0]);
    }
}
