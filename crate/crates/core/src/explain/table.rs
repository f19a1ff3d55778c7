use serde::{Deserialize, Serialize};

use super::check_inputs;
use crate::data::{ItemId, UserId};
use crate::influence::{InfluenceConfig, Removal};
use crate::model::TrainedModel;
use crate::{Error, Result};

/// A removable action: a profile item and the training point encoding it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub item: ItemId,
    pub point: usize,
}

/// Score influences of each of a user's actions on `rec` and on every
/// replacement candidate. Each action's removal delta is solved once.
///
/// Target index 0 is `rec`; target `c + 1` is candidate `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceTable {
    pub user: UserId,
    pub rec: ItemId,
    pub candidates: Vec<ItemId>,
    pub actions: Vec<Action>,
    base: Vec<f64>,
    influence: Vec<Vec<f64>>,
}

impl InfluenceTable {
    pub fn build(
        model: &TrainedModel,
        u: UserId,
        rec: ItemId,
        actions: &[ItemId],
        candidates: &[ItemId],
        cfg: &InfluenceConfig,
    ) -> Result<Self> {
        let mut table = Self::bare(model, u, rec, actions, candidates)?;
        let targets = table.targets();
        for a in &table.actions {
            let removal = Removal::compute(model, a.point, cfg)?;
            let row = targets
                .iter()
                .zip(&table.base)
                .map(|(&t, &base)| Ok(base - removal.score_after(model, u, t)?))
                .collect::<Result<Vec<f64>>>()?;
            if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite influence {bad} for user {u}")));
            }
            table.influence.push(row);
        }
        Ok(table)
    }

    /// Table over `u`'s full profile against their top-`k` list.
    pub fn for_user(model: &TrainedModel, u: UserId, k: usize, cfg: &InfluenceConfig) -> Result<Self> {
        let (rec, candidates) = top_list(model, u, k)?;
        let profile = model.dataset().profile(u).to_vec();
        Self::build(model, u, rec, &profile, &candidates, cfg)
    }

    /// Scores and actions only, for the fixed-parameter methods.
    pub fn scores_only(model: &TrainedModel, u: UserId, k: usize) -> Result<Self> {
        let (rec, candidates) = top_list(model, u, k)?;
        let profile = model.dataset().profile(u).to_vec();
        Self::bare(model, u, rec, &profile, &candidates)
    }

    fn bare(model: &TrainedModel, u: UserId, rec: ItemId, actions: &[ItemId], candidates: &[ItemId]) -> Result<Self> {
        check_inputs(model, u, rec, actions, candidates)?;
        let ds = model.dataset();
        let actions = actions
            .iter()
            .map(|&item| {
                ds.action_point(u, item)
                    .map(|point| Action { item, point })
                    .ok_or_else(|| Error::contract(format!("no training point for action {item}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut table = Self {
            user: u,
            rec,
            candidates: candidates.to_vec(),
            actions,
            base: Vec::new(),
            influence: Vec::new(),
        };
        table.base = table
            .targets()
            .iter()
            .map(|&t| model.score(u, t))
            .collect::<Result<_>>()?;
        Ok(table)
    }

    fn targets(&self) -> Vec<ItemId> {
        std::iter::once(self.rec).chain(self.candidates.iter().copied()).collect()
    }

    pub fn has_influence(&self) -> bool {
        self.influence.len() == self.actions.len()
    }

    pub fn action_items(&self) -> Vec<ItemId> {
        self.actions.iter().map(|a| a.item).collect()
    }

    /// Model score of target `t` at the trained parameters.
    pub fn score(&self, t: usize) -> f64 {
        self.base[t]
    }

    /// `ŷ_rec − ŷ_c` at the trained parameters.
    pub fn gap(&self, c: usize) -> f64 {
        self.base[0] - self.base[c + 1]
    }

    /// `I(z_a, ŷ_t)`.
    pub fn score_influence(&self, a: usize, t: usize) -> f64 {
        self.influence[a][t]
    }

    /// `I(z_a, ŷ_rec − ŷ_c)`.
    pub fn gap_influence(&self, a: usize, c: usize) -> f64 {
        let row = &self.influence[a];
        row[0] - row[c + 1]
    }

    /// The same table restricted to the first `m` candidates.
    pub fn truncated(&self, m: usize) -> Self {
        let keep: Vec<usize> = (0..m.min(self.candidates.len())).collect();
        self.select(&keep)
    }

    /// The same table over the candidates at positions `keep`, in that order.
    pub fn select(&self, keep: &[usize]) -> Self {
        let cols: Vec<usize> = std::iter::once(0).chain(keep.iter().map(|c| c + 1)).collect();
        Self {
            user: self.user,
            rec: self.rec,
            candidates: keep.iter().map(|&c| self.candidates[c]).collect(),
            actions: self.actions.clone(),
            base: cols.iter().map(|&t| self.base[t]).collect(),
            influence: self
                .influence
                .iter()
                .map(|r| cols.iter().map(|&t| r[t]).collect())
                .collect(),
        }
    }

    /// A table from precomputed numbers: `base[t]` and `influence[a][t]` over
    /// targets `[rec, candidates...]`.
    pub fn from_parts(
        user: UserId,
        rec: ItemId,
        candidates: Vec<ItemId>,
        actions: Vec<Action>,
        base: Vec<f64>,
        influence: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let width = candidates.len() + 1;
        if candidates.is_empty() || base.len() != width {
            return Err(Error::contract("need at least one candidate and one base score per target"));
        }
        if influence.len() != actions.len() || influence.iter().any(|r| r.len() != width) {
            return Err(Error::contract("influence rows must match actions and targets"));
        }
        Ok(Self {
            user,
            rec,
            candidates,
            actions,
            base,
            influence,
        })
    }
}

/// `(rec, I_rep)` from `u`'s top-`k` over unseen items.
pub(crate) fn top_list(model: &TrainedModel, u: UserId, k: usize) -> Result<(ItemId, Vec<ItemId>)> {
    if k < 2 {
        return Err(Error::contract("k must be at least 2"));
    }
    let top = model.topk(u, k, None)?;
    if top.len() < 2 {
        return Err(Error::contract(format!("user {u} has fewer than two unseen items")));
    }
    Ok((top[0].0, top[1..].iter().map(|t| t.0).collect()))
}
