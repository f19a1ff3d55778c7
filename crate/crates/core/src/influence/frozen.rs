use nalgebra::DVector;

use crate::data::UserId;
use crate::model::TrainedModel;
use crate::{Error, Result};

/// Empirical risk as a function of a single user row, every other
/// parameter frozen.
///
/// Both model kinds score affinely in the user row, so with weight decay
/// this sub-problem is strictly convex and Newton's method solves it
/// exactly. Leaving points out yields the exact leave-out optimum that
/// block-restricted influence estimates approximate. The attention pool is
/// not changed by leaving points out.
pub struct FrozenUserProblem<'a> {
    model: &'a TrainedModel,
    user: UserId,
    coords: Vec<usize>,
}

const MAX_NEWTON: usize = 100;

impl<'a> FrozenUserProblem<'a> {
    pub fn new(model: &'a TrainedModel, user: UserId) -> Result<Self> {
        model.dataset().check_user(user)?;
        Ok(Self {
            model,
            user,
            coords: model.layout.user_coords(user).collect(),
        })
    }

    pub fn user(&self) -> UserId {
        self.user
    }

    fn objective(&self, m: &TrainedModel, excluded: &[usize]) -> f64 {
        let pts = &m.dataset().points;
        let total: f64 = pts
            .iter()
            .enumerate()
            .filter(|(k, z)| z.user() == self.user && !excluded.contains(k))
            .map(|(_, z)| m.loss_at(&m.theta, z).expect("bound point"))
            .sum();
        total / m.n() as f64
    }

    /// Model whose user row minimizes the risk over all points except
    /// `excluded`.
    pub fn solve(&self, excluded: &[usize]) -> Result<TrainedModel> {
        let mut cur = self.model.clone();
        let mut f = self.objective(&cur, excluded);
        for _ in 0..MAX_NEWTON {
            let g = DVector::from_vec(cur.block_gradient(&self.coords, excluded));
            let h = cur.hessian_block_excluding(&self.coords, excluded)?;
            let chol = h
                .cholesky()
                .ok_or_else(|| Error::Numeric("frozen user block is not strictly convex".into()))?;
            let step = chol.solve(&g);
            let decrement = g.dot(&step);
            if decrement <= 1e-30 {
                break;
            }
            let mut t = 1.0;
            loop {
                let mut theta = cur.theta.clone();
                for (k, &c) in self.coords.iter().enumerate() {
                    theta[c] -= t * step[k];
                }
                let cand = cur.with_theta(theta)?;
                let fc = self.objective(&cand, excluded);
                if fc <= f - 0.25 * t * decrement || t < 1e-12 {
                    cur = cand;
                    f = fc;
                    break;
                }
                t *= 0.5;
            }
            if t == 1.0 && decrement < 1e-28 {
                break;
            }
        }
        Ok(cur)
    }
}
