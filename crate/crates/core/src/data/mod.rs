//! Rating ingestion, binarization, pruning, and training-point construction.

mod artifact;
mod movielens;
mod prepare;
pub mod synthetic;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use artifact::{load_dataset, save_dataset, DATASET_SCHEMA};
pub use movielens::{load_ratings, parse_ratings, write_ratings};
pub use prepare::{binarize, build_pointwise, pair_negatives, prune_users, PruneStats};

/// Dense user index.
pub type UserId = u32;
/// Dense item index.
pub type ItemId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub user_id: u32,
    pub item_id: u32,
    pub value: u8,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn target(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: u32,
    pub item_id: u32,
    pub label: Label,
}

/// One unit-weight training example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainingPoint {
    Pointwise {
        user: UserId,
        item: ItemId,
        label: Label,
    },
    Triple {
        user: UserId,
        pos: ItemId,
        neg: ItemId,
    },
}

impl TrainingPoint {
    pub fn user(&self) -> UserId {
        match *self {
            TrainingPoint::Pointwise { user, .. } | TrainingPoint::Triple { user, .. } => user,
        }
    }

    /// The profile action this point encodes, if any: the positive item.
    pub fn action_item(&self) -> Option<ItemId> {
        match *self {
            TrainingPoint::Pointwise {
                item,
                label: Label::Positive,
                ..
            } => Some(item),
            TrainingPoint::Pointwise { .. } => None,
            TrainingPoint::Triple { pos, .. } => Some(pos),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Pointwise,
    Pairwise,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Pointwise => "pointwise",
            DatasetKind::Pairwise => "pairwise",
        }
    }
}

/// Dense-index to original-id map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMap {
    pub users: Vec<u32>,
    pub items: Vec<u32>,
}

impl IdMap {
    pub fn user_index(&self, original: u32) -> Option<UserId> {
        self.users.binary_search(&original).ok().map(|i| i as UserId)
    }

    pub fn item_index(&self, original: u32) -> Option<ItemId> {
        self.items.binary_search(&original).ok().map(|i| i as ItemId)
    }

    pub fn original_user(&self, u: UserId) -> u32 {
        self.users[u as usize]
    }

    pub fn original_item(&self, i: ItemId) -> u32 {
        self.items[i as usize]
    }
}

/// Pruned, densely re-indexed interactions; input to point construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSet {
    pub num_users: usize,
    pub num_items: usize,
    pub interactions: Vec<Interaction>,
    pub id_map: IdMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub num_users: usize,
    pub num_items: usize,
    pub points: Vec<TrainingPoint>,
    /// Positive actions per user, ascending item index.
    pub profiles: Vec<Vec<ItemId>>,
    /// Every item each user interacted with (either label), ascending.
    /// Recommendations never include these.
    pub seen: Vec<Vec<ItemId>>,
    pub id_map: IdMap,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn profile(&self, u: UserId) -> &[ItemId] {
        &self.profiles[u as usize]
    }

    pub fn seen(&self, u: UserId) -> &[ItemId] {
        &self.seen[u as usize]
    }

    pub fn check_user(&self, u: UserId) -> crate::Result<()> {
        if (u as usize) < self.num_users {
            Ok(())
        } else {
            Err(crate::Error::UnknownId {
                kind: "user",
                id: u as u64,
            })
        }
    }

    pub fn check_item(&self, i: ItemId) -> crate::Result<()> {
        if (i as usize) < self.num_items {
            Ok(())
        } else {
            Err(crate::Error::UnknownId {
                kind: "item",
                id: i as u64,
            })
        }
    }

    /// Indices of the points that encode `u`'s positive actions on `items`.
    pub fn action_points(&self, u: UserId, items: &[ItemId]) -> Vec<usize> {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.user() == u && p.action_item().is_some_and(|i| items.contains(&i)))
            .map(|(k, _)| k)
            .collect()
    }

    /// The training point for action `item` of user `u`.
    pub fn action_point(&self, u: UserId, item: ItemId) -> Option<usize> {
        self.points
            .iter()
            .position(|p| p.user() == u && p.action_item() == Some(item))
    }

    /// Copy of the dataset with `u`'s actions on `items` removed.
    ///
    /// The `seen` lists are kept, so a retrained model still refuses to
    /// recommend removed items back to the user.
    pub fn without_actions(&self, u: UserId, items: &[ItemId]) -> Dataset {
        let drop: BTreeSet<usize> = self.action_points(u, items).into_iter().collect();
        self.without_points(&drop)
    }

    pub fn without_points(&self, drop: &BTreeSet<usize>) -> Dataset {
        let points: Vec<TrainingPoint> = self
            .points
            .iter()
            .enumerate()
            .filter(|(k, _)| !drop.contains(k))
            .map(|(_, p)| *p)
            .collect();
        let profiles = profiles_of(self.num_users, &points);
        Dataset {
            kind: self.kind,
            num_users: self.num_users,
            num_items: self.num_items,
            points,
            profiles,
            seen: self.seen.clone(),
            id_map: self.id_map.clone(),
        }
    }
}

pub(crate) fn profiles_of(num_users: usize, points: &[TrainingPoint]) -> Vec<Vec<ItemId>> {
    let mut profiles = vec![BTreeSet::new(); num_users];
    for p in points {
        if let Some(i) = p.action_item() {
            profiles[p.user() as usize].insert(i);
        }
    }
    profiles.into_iter().map(|s| s.into_iter().collect()).collect()
}
