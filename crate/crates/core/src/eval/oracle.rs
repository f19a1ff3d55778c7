use serde::{Deserialize, Serialize};

use super::retrain::Retrainer;
use crate::data::{ItemId, UserId};
use crate::par::{self, Parallelism};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCaps {
    pub max_profile: usize,
    pub max_size: usize,
}

impl Default for OracleCaps {
    fn default() -> Self {
        Self {
            max_profile: 12,
            max_size: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleHit {
    pub items: Vec<ItemId>,
    pub new_top1: ItemId,
    /// Subsets retrained before the hit, the hit included.
    pub tried: usize,
}

/// All `size`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if size > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..size).rev().find(|&p| idx[p] < n - size + p) else {
            return out;
        };
        idx[pos] += 1;
        for q in pos + 1..size {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Smallest subset of `u`'s actions (lexicographic within a size) whose
/// removal and retraining changes `u`'s top recommendation.
pub fn exhaustive_counterfactual(
    retrainer: &Retrainer<'_>,
    u: UserId,
    caps: OracleCaps,
    parallelism: Parallelism,
) -> Result<Option<OracleHit>> {
    let model = retrainer.model();
    let ds = model.dataset();
    ds.check_user(u)?;
    let profile = ds.profile(u);
    if profile.len() > caps.max_profile {
        return Err(Error::Refused(format!(
            "user {u} has {} actions, over the oracle cap of {}",
            profile.len(),
            caps.max_profile
        )));
    }
    let rec = model.topk(u, 1, None)?[0].0;
    let points: Vec<usize> = profile
        .iter()
        .map(|&i| ds.action_point(u, i).expect("profile item has a point"))
        .collect();
    let mut tried = 0;
    for size in 1..=caps.max_size.min(profile.len()) {
        let subsets = combinations(profile.len(), size);
        let check = |s: &Vec<usize>| -> Result<Option<ItemId>> {
            let pts: Vec<usize> = s.iter().map(|&k| points[k]).collect();
            let top = retrainer.top1_without(u, &pts)?;
            Ok((top != rec).then_some(top))
        };
        if parallelism.is_parallel() {
            let results = par::map(parallelism, &subsets, check);
            for (s, r) in subsets.iter().zip(results) {
                tried += 1;
                if let Some(top) = r? {
                    return Ok(Some(hit(profile, s, top, tried)));
                }
            }
        } else {
            for s in &subsets {
                tried += 1;
                if let Some(top) = check(s)? {
                    return Ok(Some(hit(profile, s, top, tried)));
                }
            }
        }
    }
    Ok(None)
}

fn hit(profile: &[ItemId], subset: &[usize], new_top1: ItemId, tried: usize) -> OracleHit {
    OracleHit {
        items: subset.iter().map(|&k| profile[k]).collect(),
        new_top1,
        tried,
    }
}
