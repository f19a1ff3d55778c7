//! Two small differentiable recommenders behind one gradient/Hessian
//! interface: a pointwise generalized matrix factorization with a linear
//! head, and a pairwise attention-over-history model.

mod checkpoint;
pub(crate) mod kernel;
mod train;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_SCHEMA};
pub use train::{train, TrainReport};
pub(crate) use train::train_quiet;

use crate::data::{Dataset, DatasetKind, ItemId, TrainingPoint, UserId};
use crate::scalar::Dual;
use crate::{Error, Result};
use kernel::{Kernel, Pool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pointwise,
    Attention,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Pointwise => "pointwise",
            ModelKind::Attention => "attention",
        }
    }

    pub fn dataset_kind(self) -> DatasetKind {
        match self {
            ModelKind::Pointwise => DatasetKind::Pointwise,
            ModelKind::Attention => DatasetKind::Pairwise,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pointwise" => Ok(ModelKind::Pointwise),
            "attention" => Ok(ModelKind::Attention),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_reg: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults tuned on the seeded desk-scale dataset (60 users, ~230
    /// items): converged enough that retraining without a few points lands
    /// in the same basin.
    pub fn new(kind: ModelKind) -> Self {
        let (dim, learning_rate, epochs) = match kind {
            ModelKind::Pointwise => (8, 1.5, 300),
            ModelKind::Attention => (4, 1.0, 200),
        };
        Self {
            kind,
            dim,
            learning_rate,
            epochs,
            l2_reg: 0.01,
            seed: 17,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::contract("embedding dimension must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract("learning rate must be positive"));
        }
        if !(self.l2_reg >= 0.0 && self.l2_reg.is_finite()) {
            return Err(Error::contract("l2_reg must be non-negative"));
        }
        Ok(())
    }
}

/// Flat parameter layout: user rows, item rows, then the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub kind: ModelKind,
    pub dim: usize,
    pub num_users: usize,
    pub num_items: usize,
}

impl Layout {
    pub fn user_row(&self, u: UserId) -> usize {
        u as usize * self.dim
    }

    pub fn item_row(&self, i: ItemId) -> usize {
        (self.num_users + i as usize) * self.dim
    }

    pub fn head(&self) -> usize {
        (self.num_users + self.num_items) * self.dim
    }

    pub fn head_len(&self) -> usize {
        match self.kind {
            ModelKind::Pointwise => self.dim + 1,
            ModelKind::Attention => self.dim * self.dim + self.dim,
        }
    }

    pub fn len(&self) -> usize {
        self.head() + self.head_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Embedding row index (users first, then items) of a coordinate.
    pub fn row_of(&self, coord: usize) -> Option<usize> {
        (coord < self.head()).then(|| coord / self.dim)
    }

    pub fn user_coords(&self, u: UserId) -> std::ops::Range<usize> {
        let r = self.user_row(u);
        r..r + self.dim
    }

    pub fn item_coords(&self, i: ItemId) -> std::ops::Range<usize> {
        let r = self.item_row(i);
        r..r + self.dim
    }
}

/// Which training points read each embedding row.
#[derive(Debug, Clone)]
pub(crate) struct TouchIndex {
    /// points whose gradient is nonzero on the row
    pub row_points: Vec<Vec<usize>>,
    /// points that regularize the row
    pub row_reg: Vec<usize>,
}

impl TouchIndex {
    fn build(layout: &Layout, ds: &Dataset) -> Self {
        let rows = layout.num_users + layout.num_items;
        let mut row_points: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); rows];
        let mut row_reg = vec![0usize; rows];
        let mut user_points: Vec<Vec<usize>> = vec![Vec::new(); layout.num_users];
        let item = |i: ItemId| layout.num_users + i as usize;
        for (k, z) in ds.points.iter().enumerate() {
            user_points[z.user() as usize].push(k);
            match *z {
                TrainingPoint::Pointwise { user, item: i, .. } => {
                    for r in [user as usize, item(i)] {
                        row_points[r].insert(k);
                        row_reg[r] += 1;
                    }
                }
                TrainingPoint::Triple { user, pos, neg } => {
                    for r in [user as usize, item(pos), item(neg)] {
                        row_points[r].insert(k);
                        row_reg[r] += 1;
                    }
                }
            }
        }
        if layout.kind == ModelKind::Attention {
            for (u, pts) in user_points.iter().enumerate() {
                for &j in &ds.profiles[u] {
                    row_points[item(j)].extend(pts.iter().copied());
                }
            }
        }
        Self {
            row_points: row_points
                .into_iter()
                .map(|s| s.into_iter().collect())
                .collect(),
            row_reg,
        }
    }
}

/// Sparse gradient, sorted by coordinate, duplicates merged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad {
    pub entries: Vec<(usize, f64)>,
}

impl SparseGrad {
    fn from_map(map: BTreeMap<usize, f64>) -> Self {
        Self {
            entries: map.into_iter().collect(),
        }
    }

    pub fn get(&self, coord: usize) -> f64 {
        self.entries
            .binary_search_by_key(&coord, |e| e.0)
            .map(|k| self.entries[k].1)
            .unwrap_or(0.0)
    }
}

/// A trained model bound to its training data. Immutable after training.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub layout: Layout,
    pub theta: Vec<f64>,
    pub report: TrainReport,
    dataset: Arc<Dataset>,
    index: TouchIndex,
}

impl TrainedModel {
    pub(crate) fn assemble(
        config: TrainConfig,
        dataset: Arc<Dataset>,
        theta: Vec<f64>,
        report: TrainReport,
    ) -> Self {
        let layout = Layout {
            kind: config.kind,
            dim: config.dim,
            num_users: dataset.num_users,
            num_items: dataset.num_items,
        };
        let index = TouchIndex::build(&layout, &dataset);
        Self {
            config,
            layout,
            theta,
            report,
            dataset,
            index,
        }
    }

    /// A model with caller-supplied parameters; `theta` must match the layout.
    pub fn from_params(config: TrainConfig, dataset: Arc<Dataset>, theta: Vec<f64>) -> Result<Self> {
        config.validate()?;
        check_kind(config.kind, &dataset)?;
        let m = Self::assemble(config, dataset, theta, TrainReport::default());
        if m.theta.len() != m.layout.len() {
            return Err(Error::contract(format!(
                "parameter vector has {} entries, layout needs {}",
                m.theta.len(),
                m.layout.len()
            )));
        }
        Ok(m)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn dataset_arc(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn n(&self) -> usize {
        self.dataset.n()
    }

    pub(crate) fn kernel(&self) -> Kernel<'_> {
        Kernel {
            layout: &self.layout,
            profiles: &self.dataset.profiles,
            l2: self.config.l2_reg,
        }
    }

    pub(crate) fn index(&self) -> &TouchIndex {
        &self.index
    }

    pub fn score(&self, u: UserId, i: ItemId) -> Result<f64> {
        self.dataset.check_user(u)?;
        self.dataset.check_item(i)?;
        let k = self.kernel();
        Ok(k.score(&|c| self.theta[c], u, i, k.pool_for(u, i)))
    }

    /// Scores of every item for `u`, indexed by item.
    pub fn scores(&self, u: UserId) -> Result<Vec<f64>> {
        self.dataset.check_user(u)?;
        let k = self.kernel();
        let theta = |c: usize| self.theta[c];
        Ok((0..self.layout.num_items as ItemId)
            .map(|i| k.score(&theta, u, i, k.pool_for(u, i)))
            .collect())
    }

    /// Score with `theta + delta`, and the attention pool shrunk by `removed`.
    pub(crate) fn score_perturbed(
        &self,
        delta: &[(usize, f64)],
        u: UserId,
        i: ItemId,
        removed: &[ItemId],
    ) -> f64 {
        let k = self.kernel();
        let theta = |c: usize| {
            let base = self.theta[c];
            match delta.binary_search_by_key(&c, |e| e.0) {
                Ok(pos) => base + delta[pos].1,
                Err(_) => base,
            }
        };
        if removed.is_empty() {
            k.score(&theta, u, i, k.pool_for(u, i))
        } else {
            let pool: Vec<ItemId> = self
                .dataset
                .profile(u)
                .iter()
                .copied()
                .filter(|j| !removed.contains(j))
                .collect();
            k.score(&theta, u, i, Pool::new(&pool).skipping(Some(i)))
        }
    }

    /// Attention weights of `u`'s profile when scoring `i`, in profile order.
    pub fn attention_weights(&self, u: UserId, i: ItemId) -> Result<Vec<f64>> {
        self.require_attention("attention_weights")?;
        self.dataset.check_user(u)?;
        self.dataset.check_item(i)?;
        let k = self.kernel();
        let (pool, alpha) = k.attention_weights(&|c| self.theta[c], u, i, k.pool_for(u, i));
        Ok(self
            .dataset
            .profile(u)
            .iter()
            .map(|j| pool.iter().position(|p| p == j).map_or(0.0, |x| alpha[x]))
            .collect())
    }

    /// Score with profile items `removed` dropped from the attention pool and
    /// every parameter left unchanged.
    pub fn score_without(&self, u: UserId, i: ItemId, removed: &[ItemId]) -> Result<f64> {
        self.require_attention("score_without")?;
        self.dataset.check_user(u)?;
        self.dataset.check_item(i)?;
        let profile = self.dataset.profile(u);
        if let Some(bad) = removed.iter().find(|r| !profile.contains(r)) {
            return Err(Error::contract(format!(
                "item {bad} is not in user {u}'s profile"
            )));
        }
        let remaining = profile.iter().filter(|j| !removed.contains(j)).count();
        if remaining == 0 {
            return Err(Error::contract("cannot remove the entire profile"));
        }
        Ok(self.score_perturbed(&[], u, i, removed))
    }

    fn require_attention(&self, op: &str) -> Result<()> {
        match self.kind() {
            ModelKind::Attention => Ok(()),
            ModelKind::Pointwise => Err(Error::Unsupported(format!(
                "{op} requires the attention model"
            ))),
        }
    }

    /// Top-`k` items by score, excluding `exclude` (default: the user's
    /// training items). Descending score, ties to the smaller item index.
    pub fn topk(&self, u: UserId, k: usize, exclude: Option<&[ItemId]>) -> Result<Vec<(ItemId, f64)>> {
        self.dataset.check_user(u)?;
        if k == 0 {
            return Err(Error::contract("k must be at least 1"));
        }
        let exclude = exclude.unwrap_or_else(|| self.dataset.seen(u));
        let kern = self.kernel();
        let theta = |c: usize| self.theta[c];
        let mut scored: Vec<(ItemId, f64)> = (0..self.layout.num_items as ItemId)
            .filter(|i| !exclude.contains(i))
            .map(|i| (i, kern.score(&theta, u, i, kern.pool_for(u, i))))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    pub fn loss(&self, z: &TrainingPoint) -> Result<f64> {
        self.check_point(z)?;
        Ok(self.kernel().point_loss(&|c| self.theta[c], z))
    }

    /// `L(z, θ)` evaluated at an arbitrary parameter vector.
    pub fn loss_at(&self, theta: &[f64], z: &TrainingPoint) -> Result<f64> {
        self.check_point(z)?;
        if theta.len() != self.layout.len() {
            return Err(Error::contract("parameter vector does not match the layout"));
        }
        Ok(self.kernel().point_loss(&|c| theta[c], z))
    }

    pub fn grad_loss(&self, z: &TrainingPoint) -> Result<SparseGrad> {
        self.check_point(z)?;
        let mut map = BTreeMap::new();
        self.kernel()
            .point_grad(&|c| self.theta[c], z, true, &mut |c, g: f64| {
                *map.entry(c).or_insert(0.0) += g
            });
        Ok(SparseGrad::from_map(map))
    }

    /// Mean empirical risk `(1/n) Σ L(z_i, θ)`.
    pub fn risk(&self) -> f64 {
        let kern = self.kernel();
        let theta = |c: usize| self.theta[c];
        let total: f64 = self.dataset.points.iter().map(|z| kern.point_loss(&theta, z)).sum();
        total / self.n() as f64
    }

    /// Dense gradient of the empirical risk at `theta`.
    pub fn risk_gradient_at(&self, theta: &[f64]) -> Vec<f64> {
        let kern = self.kernel();
        let mut g = vec![0.0; theta.len()];
        for z in &self.dataset.points {
            kern.point_grad(&|c| theta[c], z, true, &mut |c, v: f64| g[c] += v);
        }
        let n = self.n() as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }

    fn check_point(&self, z: &TrainingPoint) -> Result<()> {
        self.dataset.check_user(z.user())?;
        match *z {
            TrainingPoint::Pointwise { item, .. } if self.kind() == ModelKind::Pointwise => {
                self.dataset.check_item(item)
            }
            TrainingPoint::Triple { pos, neg, .. } if self.kind() == ModelKind::Attention => {
                self.dataset.check_item(pos)?;
                self.dataset.check_item(neg)
            }
            _ => Err(Error::KindMismatch {
                expected: self.kind().dataset_kind().as_str(),
                found: match z {
                    TrainingPoint::Pointwise { .. } => "pointwise",
                    TrainingPoint::Triple { .. } => "pairwise",
                },
            }),
        }
    }

    /// Training points whose loss depends on any coordinate in `coords`.
    pub(crate) fn points_touching(&self, coords: &[usize]) -> Vec<usize> {
        if coords.iter().any(|&c| self.layout.row_of(c).is_none()) {
            return (0..self.n()).collect();
        }
        let mut rows: Vec<usize> = coords.iter().filter_map(|&c| self.layout.row_of(c)).collect();
        rows.dedup();
        let mut pts = BTreeSet::new();
        for r in rows {
            pts.extend(self.index.row_points[r].iter().copied());
        }
        pts.into_iter().collect()
    }

    /// Same model with different parameter values.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<TrainedModel> {
        if theta.len() != self.layout.len() {
            return Err(Error::contract("parameter vector does not match the layout"));
        }
        Ok(TrainedModel {
            theta,
            ..self.clone()
        })
    }

    /// `(1/n) Σ_i ∇_S L(z_i, θ̂)` over all points except `excluded`.
    pub fn block_gradient(&self, coords: &[usize], excluded: &[usize]) -> Vec<f64> {
        let kern = self.kernel();
        let mut g = vec![0.0; coords.len()];
        for k in self.points_touching(coords) {
            if excluded.contains(&k) {
                continue;
            }
            kern.point_grad(&|c| self.theta[c], &self.dataset.points[k], true, &mut |c, v: f64| {
                if let Some(pos) = coords.iter().position(|&x| x == c) {
                    g[pos] += v;
                }
            });
        }
        let n = self.n() as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }

    /// `(1/n) Σ_i ∇²L(z_i, θ̂)` restricted to `coords × coords`.
    ///
    /// Each column is the directional derivative of the analytic gradient,
    /// obtained exactly with dual numbers; the result is symmetrized.
    pub fn hessian_block(&self, coords: &[usize]) -> Result<DMatrix<f64>> {
        self.hessian_block_excluding(coords, &[])
    }

    /// [`Self::hessian_block`] with the points in `excluded` left out of the sum
    /// (the normalization stays `1/n`).
    pub fn hessian_block_excluding(&self, coords: &[usize], excluded: &[usize]) -> Result<DMatrix<f64>> {
        if coords.is_empty() {
            return Err(Error::contract("Hessian block needs a non-empty coordinate set"));
        }
        let mut sorted = coords.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != coords.len() {
            return Err(Error::contract("duplicate coordinates in Hessian block"));
        }
        if let Some(&bad) = sorted.last().filter(|&&c| c >= self.layout.len()) {
            return Err(Error::UnknownId {
                kind: "coordinate",
                id: bad as u64,
            });
        }
        let m = coords.len();
        let pos = |c: usize| coords.iter().position(|&x| x == c);
        let kern = self.kernel();
        let mut h = DMatrix::<f64>::zeros(m, m);
        let points: Vec<usize> = self
            .points_touching(coords)
            .into_iter()
            .filter(|k| !excluded.contains(k))
            .collect();
        for (col, &seed) in coords.iter().enumerate() {
            let theta = |c: usize| Dual::new(self.theta[c], if c == seed { 1.0 } else { 0.0 });
            for &k in &points {
                let z = &self.dataset.points[k];
                kern.point_grad(&theta, z, true, &mut |c, g: Dual| {
                    if g.eps != 0.0 {
                        if let Some(row) = pos(c) {
                            h[(row, col)] += g.eps;
                        }
                    }
                });
            }
        }
        let n = self.n() as f64;
        let sym = (&h + h.transpose()) * (0.5 / n);
        Ok(sym)
    }
}

pub(crate) fn check_kind(kind: ModelKind, ds: &Dataset) -> Result<()> {
    if ds.kind != kind.dataset_kind() {
        return Err(Error::KindMismatch {
            expected: kind.dataset_kind().as_str(),
            found: ds.kind.as_str(),
        });
    }
    if ds.points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}
