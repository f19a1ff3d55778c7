use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::data::{ItemId, UserId};
use crate::influence::retrain_without;
use crate::model::TrainedModel;
use crate::{Error, Result};

/// Scores a user gets from a model retrained without some of their points.
#[derive(Debug, Clone)]
pub enum Retrained {
    Scores(Arc<Vec<f64>>),
    Failed(String),
}

/// Memoized from-scratch retraining. Retraining is deterministic, so the
/// cache only saves time; it never changes a result.
pub struct Retrainer<'m> {
    model: &'m TrainedModel,
    cache: Mutex<HashMap<(UserId, Vec<usize>), Retrained>>,
    runs: AtomicUsize,
}

impl<'m> Retrainer<'m> {
    pub fn new(model: &'m TrainedModel) -> Self {
        Self {
            model,
            cache: Mutex::new(HashMap::new()),
            runs: AtomicUsize::new(0),
        }
    }

    pub fn model(&self) -> &TrainedModel {
        self.model
    }

    /// Number of actual training runs so far.
    pub fn runs(&self) -> usize {
        self.runs.load(Ordering::Relaxed)
    }

    /// `u`'s scores for every item after retraining without `points`.
    pub fn scores_without(&self, u: UserId, points: &[usize]) -> Retrained {
        let mut key = points.to_vec();
        key.sort_unstable();
        key.dedup();
        let key = (u, key);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return hit.clone();
        }
        self.runs.fetch_add(1, Ordering::Relaxed);
        let result = match retrain_without(self.model, &key.1).and_then(|m| m.scores(u)) {
            Ok(s) => Retrained::Scores(Arc::new(s)),
            Err(e) => Retrained::Failed(e.to_string()),
        };
        self.cache.lock().expect("cache lock").insert(key, result.clone());
        result
    }

    /// Top-1 unseen item for `u` after retraining without `points`.
    pub fn top1_without(&self, u: UserId, points: &[usize]) -> Result<ItemId> {
        match self.scores_without(u, points) {
            Retrained::Scores(s) => top1(&s, self.model.dataset().seen(u)),
            Retrained::Failed(msg) => Err(Error::Numeric(msg)),
        }
    }
}

/// Highest-scoring item outside `seen`, smaller index on ties.
pub fn top1(scores: &[f64], seen: &[ItemId]) -> Result<ItemId> {
    let mut best: Option<(ItemId, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        let i = i as ItemId;
        if seen.binary_search(&i).is_ok() {
            continue;
        }
        if best.map_or(true, |b| s > b.1) {
            best = Some((i, s));
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| Error::contract("every item has been seen"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top1_skips_seen_and_breaks_ties_low() {
        assert_eq!(top1(&[5.0, 1.0, 3.0, 3.0], &[0]).unwrap(), 2);
        assert!(top1(&[1.0], &[0]).is_err());
    }
}
