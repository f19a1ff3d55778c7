//! Damped, block-restricted influence estimates of removing training points.
//!
//! Removing point `z` moves the parameters by approximately
//! `(1/n) (H_SS + λI)^{-1} ∇_S L(z, θ̂)`, where `S` holds only the embedding
//! coordinates `z` touches and `H_SS` is the matching block of the
//! empirical-risk Hessian. Score influences compare a forward pass at `θ̂`
//! with one at the shifted parameters.

mod frozen;
mod solve;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use frozen::FrozenUserProblem;
pub use solve::{conjugate_gradient, DampedHessian, DENSE_LIMIT, RESIDUAL_TOL};

use crate::data::{ItemId, TrainingPoint, UserId};
use crate::model::{ModelKind, TrainedModel};
use crate::{Error, Result};

pub const DEFAULT_DAMPING: f64 = 0.01;

/// Which coordinates a removal is allowed to move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restriction {
    /// The user row and every item row the point touches directly.
    TouchedEmbeddings,
    /// Only the user row.
    UserOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluenceConfig {
    pub damping: f64,
    /// Attention model: also drop the removed action from the attention pool.
    pub pool_exclusion: bool,
    pub restriction: Restriction,
    pub dense_limit: usize,
}

impl InfluenceConfig {
    pub fn with_damping(damping: f64) -> Self {
        Self {
            damping,
            ..Self::default()
        }
    }
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        Self {
            damping: DEFAULT_DAMPING,
            pool_exclusion: true,
            restriction: Restriction::TouchedEmbeddings,
            dense_limit: DENSE_LIMIT,
        }
    }
}

/// Estimated `θ̂^{-z} − θ̂`, sparse and sorted by coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDelta {
    pub entries: Vec<(usize, f64)>,
}

impl ParamDelta {
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| e.1 == 0.0)
    }
}

/// Coordinate subset a removal of `z` may move.
pub fn restricted_coords(model: &TrainedModel, z: &TrainingPoint, restriction: Restriction) -> Vec<usize> {
    let lay = &model.layout;
    let mut coords: Vec<usize> = lay.user_coords(z.user()).collect();
    if restriction == Restriction::TouchedEmbeddings {
        match *z {
            TrainingPoint::Pointwise { item, .. } => coords.extend(lay.item_coords(item)),
            TrainingPoint::Triple { pos, neg, .. } => {
                coords.extend(lay.item_coords(pos));
                coords.extend(lay.item_coords(neg));
            }
        }
    }
    coords.sort_unstable();
    coords
}

fn point(model: &TrainedModel, z: usize) -> Result<TrainingPoint> {
    model
        .dataset()
        .points
        .get(z)
        .copied()
        .ok_or(Error::UnknownId {
            kind: "training point",
            id: z as u64,
        })
}

fn check_damping(damping: f64) -> Result<()> {
    if damping >= 0.0 && damping.is_finite() {
        Ok(())
    } else {
        Err(Error::contract(format!("damping {damping} must be finite and non-negative")))
    }
}

/// The damped Hessian block a removal of training point `z` is solved against.
pub fn damped_hessian(model: &TrainedModel, z: usize, cfg: &InfluenceConfig) -> Result<DampedHessian> {
    check_damping(cfg.damping)?;
    let zp = point(model, z)?;
    let coords = restricted_coords(model, &zp, cfg.restriction);
    let block = model.hessian_block(&coords)?;
    Ok(DampedHessian::new(coords, block, cfg.damping, model.n()))
}

/// Estimated parameter change from removing training point `z`.
pub fn removal_delta(model: &TrainedModel, z: usize, cfg: &InfluenceConfig) -> Result<ParamDelta> {
    let h = damped_hessian(model, z, cfg)?;
    let zp = point(model, z)?;
    let grad = model.grad_loss(&zp)?;
    let rhs: Vec<f64> = h.coords.iter().map(|&c| grad.get(c)).collect();
    h.removal_delta(&rhs, cfg.dense_limit)
}

/// A computed removal: the point, its parameter delta, and what leaves the
/// attention pool. Reused for every score target of the same user.
#[derive(Debug, Clone)]
pub struct Removal {
    pub point: usize,
    pub user: UserId,
    pub action: Option<ItemId>,
    pub delta: ParamDelta,
    pool_exclusion: bool,
}

impl Removal {
    pub fn compute(model: &TrainedModel, z: usize, cfg: &InfluenceConfig) -> Result<Self> {
        let zp = point(model, z)?;
        Ok(Self {
            point: z,
            user: zp.user(),
            action: zp.action_item(),
            delta: removal_delta(model, z, cfg)?,
            pool_exclusion: cfg.pool_exclusion && model.kind() == ModelKind::Attention,
        })
    }

    /// Estimated `ŷ_{u,i}` after the removal.
    pub fn score_after(&self, model: &TrainedModel, u: UserId, i: ItemId) -> Result<f64> {
        model.dataset().check_user(u)?;
        model.dataset().check_item(i)?;
        let removed: Vec<ItemId> = match self.action {
            Some(a) if self.pool_exclusion && u == self.user => vec![a],
            _ => Vec::new(),
        };
        Ok(model.score_perturbed(&self.delta.entries, u, i, &removed))
    }

    /// `I(z, ŷ_{u,i}) = ŷ_{u,i} − ŷ^{-z}_{u,i}`.
    pub fn influence_on(&self, model: &TrainedModel, u: UserId, i: ItemId) -> Result<f64> {
        Ok(model.score(u, i)? - self.score_after(model, u, i)?)
    }
}

pub fn influence_on_score(
    model: &TrainedModel,
    z: usize,
    u: UserId,
    i: ItemId,
    cfg: &InfluenceConfig,
) -> Result<f64> {
    Removal::compute(model, z, cfg)?.influence_on(model, u, i)
}

/// Influence of one removal on the gap `ŷ_{u,i} − ŷ_{u,j}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRecord {
    pub point: usize,
    pub user: UserId,
    pub item: ItemId,
    pub alt: ItemId,
    /// `I(z, ŷ_{u,item})`
    pub score_influence_rec: f64,
    /// `I(z, ŷ_{u,alt})`
    pub score_influence_alt: f64,
    pub gap_influence: f64,
}

impl InfluenceRecord {
    pub fn new(point: usize, user: UserId, item: ItemId, alt: ItemId, on_item: f64, on_alt: f64) -> Self {
        Self {
            point,
            user,
            item,
            alt,
            score_influence_rec: on_item,
            score_influence_alt: on_alt,
            gap_influence: on_item - on_alt,
        }
    }
}

pub fn influence_on_gap(
    model: &TrainedModel,
    z: usize,
    u: UserId,
    i: ItemId,
    j: ItemId,
    cfg: &InfluenceConfig,
) -> Result<InfluenceRecord> {
    if i == j {
        return Err(Error::contract("gap influence needs two distinct items"));
    }
    let removal = Removal::compute(model, z, cfg)?;
    let on_i = removal.influence_on(model, u, i)?;
    let on_j = removal.influence_on(model, u, j)?;
    Ok(InfluenceRecord::new(z, u, i, j, on_i, on_j))
}

/// Additive estimate of removing every point in `records` together.
pub fn set_influence(records: &[InfluenceRecord]) -> Result<f64> {
    if let Some(first) = records.first() {
        let target = (first.user, first.item, first.alt);
        if records.iter().any(|r| (r.user, r.item, r.alt) != target) {
            return Err(Error::contract("records target different (user, item, alt) triples"));
        }
    }
    Ok(records.iter().map(|r| r.gap_influence).sum())
}

/// Retrains from scratch without `points` (same config and seed) and returns
/// the observed change of the gap `ŷ_{u,i} − ŷ_{u,j}`.
pub fn true_influence(model: &TrainedModel, points: &[usize], u: UserId, i: ItemId, j: ItemId) -> Result<f64> {
    let before = model.score(u, i)? - model.score(u, j)?;
    if points.is_empty() {
        return Ok(0.0);
    }
    let retrained = retrain_without(model, points)?;
    let after = retrained.score(u, i)? - retrained.score(u, j)?;
    Ok(before - after)
}

/// Fresh training run on the bound dataset minus `points`.
pub fn retrain_without(model: &TrainedModel, points: &[usize]) -> Result<TrainedModel> {
    let n = model.n();
    if let Some(&bad) = points.iter().find(|&&k| k >= n) {
        return Err(Error::UnknownId {
            kind: "training point",
            id: bad as u64,
        });
    }
    let drop: BTreeSet<usize> = points.iter().copied().collect();
    let reduced = model.dataset().without_points(&drop);
    if reduced.points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    crate::model::train_quiet(Arc::new(reduced), &model.config)
}

#[cfg(test)]
mod tests;
