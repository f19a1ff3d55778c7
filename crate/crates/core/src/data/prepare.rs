use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    profiles_of, Dataset, DatasetKind, IdMap, Interaction, InteractionSet, ItemId, Label, Rating,
    TrainingPoint,
};
use crate::{Error, Result};

pub fn binarize(ratings: &[Rating], threshold: u8) -> Result<Vec<Interaction>> {
    if !(1..=5).contains(&threshold) {
        return Err(Error::contract(format!(
            "binarization threshold {threshold} outside [1, 5]"
        )));
    }
    Ok(ratings
        .iter()
        .map(|r| Interaction {
            user_id: r.user_id,
            item_id: r.item_id,
            label: if r.value >= threshold {
                Label::Positive
            } else {
                Label::Negative
            },
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneStats {
    pub users_before: usize,
    pub items_before: usize,
    pub interactions_before: usize,
    pub users_after: usize,
    pub items_after: usize,
    pub interactions_after: usize,
}

/// Drops users below the positive/negative minimums (inclusive bounds),
/// then items left without interactions, and re-indexes both densely in
/// ascending original-id order.
pub fn prune_users(
    interactions: &[Interaction],
    min_pos: usize,
    min_neg: usize,
) -> Result<(InteractionSet, PruneStats)> {
    let mut counts: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for x in interactions {
        let c = counts.entry(x.user_id).or_default();
        match x.label {
            Label::Positive => c.0 += 1,
            Label::Negative => c.1 += 1,
        }
    }
    let keep: BTreeSet<u32> = counts
        .iter()
        .filter(|(_, &(p, n))| p >= min_pos && n >= min_neg)
        .map(|(&u, _)| u)
        .collect();
    let kept: Vec<&Interaction> = interactions
        .iter()
        .filter(|x| keep.contains(&x.user_id))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let users: Vec<u32> = keep.into_iter().collect();
    let items: Vec<u32> = kept
        .iter()
        .map(|x| x.item_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let id_map = IdMap { users, items };
    let dense = kept
        .iter()
        .map(|x| Interaction {
            user_id: id_map.user_index(x.user_id).expect("kept user"),
            item_id: id_map.item_index(x.item_id).expect("kept item"),
            label: x.label,
        })
        .collect::<Vec<_>>();
    let stats = PruneStats {
        users_before: counts.len(),
        items_before: interactions
            .iter()
            .map(|x| x.item_id)
            .collect::<BTreeSet<_>>()
            .len(),
        interactions_before: interactions.len(),
        users_after: id_map.users.len(),
        items_after: id_map.items.len(),
        interactions_after: dense.len(),
    };
    Ok((
        InteractionSet {
            num_users: id_map.users.len(),
            num_items: id_map.items.len(),
            interactions: dense,
            id_map,
        },
        stats,
    ))
}

impl InteractionSet {
    /// Interactions expressed in original ids.
    pub fn original_interactions(&self) -> Vec<Interaction> {
        self.interactions
            .iter()
            .map(|x| Interaction {
                user_id: self.id_map.original_user(x.user_id),
                item_id: self.id_map.original_item(x.item_id),
                label: x.label,
            })
            .collect()
    }

    fn seen(&self) -> Vec<Vec<ItemId>> {
        let mut seen = vec![BTreeSet::new(); self.num_users];
        for x in &self.interactions {
            seen[x.user_id as usize].insert(x.item_id);
        }
        seen.into_iter().map(|s| s.into_iter().collect()).collect()
    }
}

/// One pointwise training point per interaction.
pub fn build_pointwise(set: &InteractionSet) -> Result<Dataset> {
    if set.interactions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let points: Vec<TrainingPoint> = set
        .interactions
        .iter()
        .map(|x| TrainingPoint::Pointwise {
            user: x.user_id,
            item: x.item_id,
            label: x.label,
        })
        .collect();
    Ok(Dataset {
        kind: DatasetKind::Pointwise,
        num_users: set.num_users,
        num_items: set.num_items,
        profiles: profiles_of(set.num_users, &points),
        points,
        seen: set.seen(),
        id_map: set.id_map.clone(),
    })
}

/// Pairs every positive interaction with one of the same user's negatives.
///
/// The negative sharing the most co-raters with the positive wins (other
/// users who rated both items, either label); ties go to the smaller item
/// index. When every candidate has zero co-raters the negative is drawn
/// uniformly from a generator seeded with `seed`.
pub fn pair_negatives(set: &InteractionSet, seed: u64) -> Result<Dataset> {
    let mut raters: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); set.num_items];
    let mut pos: Vec<Vec<ItemId>> = vec![Vec::new(); set.num_users];
    let mut neg: Vec<Vec<ItemId>> = vec![Vec::new(); set.num_users];
    for x in &set.interactions {
        raters[x.item_id as usize].insert(x.user_id);
        match x.label {
            Label::Positive => pos[x.user_id as usize].push(x.item_id),
            Label::Negative => neg[x.user_id as usize].push(x.item_id),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for u in 0..set.num_users {
        let (pos_u, neg_u) = (&mut pos[u], &mut neg[u]);
        pos_u.sort_unstable();
        neg_u.sort_unstable();
        if pos_u.is_empty() {
            continue;
        }
        if neg_u.is_empty() {
            return Err(Error::MissingNegatives { user: u as u32 });
        }
        for &p in pos_u.iter() {
            let co = |j: ItemId| {
                raters[p as usize]
                    .intersection(&raters[j as usize])
                    .filter(|&&v| v as usize != u)
                    .count()
            };
            let mut best = neg_u[0];
            let mut best_count = co(best);
            for &j in &neg_u[1..] {
                let c = co(j);
                if c > best_count {
                    best = j;
                    best_count = c;
                }
            }
            if best_count == 0 {
                best = *neg_u.choose(&mut rng).expect("non-empty");
            }
            points.push(TrainingPoint::Triple {
                user: u as u32,
                pos: p,
                neg: best,
            });
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset {
        kind: DatasetKind::Pairwise,
        num_users: set.num_users,
        num_items: set.num_items,
        profiles: profiles_of(set.num_users, &points),
        points,
        seen: set.seen(),
        id_map: set.id_map.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rating(u: u32, i: u32, v: u8) -> Rating {
        Rating {
            user_id: u,
            item_id: i,
            value: v,
            timestamp: 0,
        }
    }

    fn inter(u: u32, i: u32, positive: bool) -> Interaction {
        Interaction {
            user_id: u,
            item_id: i,
            label: if positive {
                Label::Positive
            } else {
                Label::Negative
            },
        }
    }

    #[test]
    fn binarize_threshold_rules() {
        let r = [rating(1, 1, 3), rating(1, 2, 2), rating(1, 3, 5)];
        let x = binarize(&r, 3).unwrap();
        assert_eq!(x[0].label, Label::Positive);
        assert_eq!(x[1].label, Label::Negative);
        let all = binarize(&r, 1).unwrap();
        assert!(all.iter().all(|i| i.label == Label::Positive));
        assert!(binarize(&r, 0).is_err());
        assert!(binarize(&r, 6).is_err());
    }

    fn profile_user(u: u32, npos: u32, nneg: u32) -> Vec<Interaction> {
        (0..npos)
            .map(|k| inter(u, k, true))
            .chain((0..nneg).map(|k| inter(u, 100 + k, false)))
            .collect()
    }

    #[test]
    fn prune_boundaries() {
        let mut xs = profile_user(7, 9, 20);
        xs.extend(profile_user(8, 10, 10));
        let (set, stats) = prune_users(&xs, 10, 10).unwrap();
        assert_eq!(set.id_map.users, vec![8]);
        assert_eq!(stats.users_before, 2);
        assert_eq!(stats.users_after, 1);
        assert_eq!(set.interactions.len(), 20);
        // items 10..19 and 110..119 were only rated by the dropped user
        assert_eq!(set.num_items, 20);
    }

    #[test]
    fn prune_zero_minimums_keeps_everyone() {
        let mut xs = profile_user(3, 1, 0);
        xs.extend(profile_user(5, 0, 2));
        let (set, _) = prune_users(&xs, 0, 0).unwrap();
        assert_eq!(set.id_map.users, vec![3, 5]);
        assert_eq!(set.interactions.len(), 3);
    }

    #[test]
    fn prune_to_nothing_is_an_error() {
        let xs = profile_user(1, 2, 2);
        assert!(matches!(prune_users(&xs, 5, 5), Err(Error::EmptyDataset)));
    }

    #[test]
    fn pairing_single_candidate() {
        let xs = vec![inter(0, 1, true), inter(0, 2, true), inter(0, 9, false)];
        let (set, _) = prune_users(&xs, 0, 0).unwrap();
        let ds = pair_negatives(&set, 0).unwrap();
        let x = set.id_map.item_index(9).unwrap();
        let a = set.id_map.item_index(1).unwrap();
        let b = set.id_map.item_index(2).unwrap();
        assert_eq!(
            ds.points,
            vec![
                TrainingPoint::Triple { user: 0, pos: a, neg: x },
                TrainingPoint::Triple { user: 0, pos: b, neg: x },
            ]
        );
    }

    #[test]
    fn pairing_prefers_most_co_rated_negative() {
        // user 0 likes item 1 and dislikes 20 (x) and 10 (y).
        // item 1 is co-rated with x by users 1..=5 and with y by users 1..=2.
        let mut xs = vec![inter(0, 1, true), inter(0, 20, false), inter(0, 10, false)];
        for v in 1..=5 {
            xs.push(inter(v, 1, false));
            xs.push(inter(v, 20, false));
        }
        for v in 1..=2 {
            xs.push(inter(v, 10, false));
        }
        let (set, _) = prune_users(&xs, 0, 0).unwrap();
        let ds = pair_negatives(&set, 0).unwrap();
        let want = TrainingPoint::Triple {
            user: 0,
            pos: set.id_map.item_index(1).unwrap(),
            neg: set.id_map.item_index(20).unwrap(),
        };
        assert_eq!(ds.points[0], want);
    }

    #[test]
    fn pairing_tie_goes_to_smaller_item() {
        let mut xs = vec![inter(0, 1, true), inter(0, 30, false), inter(0, 40, false)];
        for v in 1..=2 {
            xs.push(inter(v, 1, false));
            xs.push(inter(v, 30, false));
            xs.push(inter(v, 40, false));
        }
        let (set, _) = prune_users(&xs, 0, 0).unwrap();
        let ds = pair_negatives(&set, 0).unwrap();
        match ds.points[0] {
            TrainingPoint::Triple { neg, .. } => assert_eq!(set.id_map.original_item(neg), 30),
            _ => unreachable!(),
        }
    }

    #[test]
    fn pairing_without_negatives_fails() {
        let xs = vec![inter(0, 1, true), inter(1, 1, false)];
        let (set, _) = prune_users(&xs, 0, 0).unwrap();
        assert!(matches!(
            pair_negatives(&set, 0),
            Err(Error::MissingNegatives { user: 0 })
        ));
    }

    #[test]
    fn pointwise_targets() {
        let xs = vec![inter(0, 1, true), inter(0, 2, false)];
        let (set, _) = prune_users(&xs, 0, 0).unwrap();
        let ds = build_pointwise(&set).unwrap();
        assert_eq!(ds.n(), 2);
        let targets: Vec<f64> = ds
            .points
            .iter()
            .map(|p| match p {
                TrainingPoint::Pointwise { label, .. } => label.target(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(targets, vec![1.0, 0.0]);
        assert_eq!(ds.profiles[0], vec![0]);
        assert_eq!(ds.seen[0], vec![0, 1]);
    }

    fn arb_ratings() -> impl Strategy<Value = Vec<Rating>> {
        proptest::collection::btree_map((0u32..12, 0u32..30), 1u8..=5, 1..200).prop_map(|m| {
            m.into_iter()
                .map(|((u, i), v)| rating(u, i, v))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn binarize_is_monotone(rs in arb_ratings(), t in 1u8..5) {
            let lo = binarize(&rs, t).unwrap();
            let hi = binarize(&rs, t + 1).unwrap();
            prop_assert_eq!(lo.len(), rs.len());
            for (a, b) in lo.iter().zip(&hi) {
                if a.label == Label::Negative {
                    prop_assert_eq!(b.label, Label::Negative);
                }
            }
        }

        #[test]
        fn prune_is_idempotent(rs in arb_ratings(), mp in 0usize..4, mn in 0usize..4) {
            let xs = binarize(&rs, 3).unwrap();
            if let Ok((once, _)) = prune_users(&xs, mp, mn) {
                let (twice, _) = prune_users(&once.original_interactions(), mp, mn).unwrap();
                prop_assert_eq!(&twice.original_interactions(), &once.original_interactions());
                prop_assert_eq!(&twice.id_map, &once.id_map);
            }
        }

        #[test]
        fn id_map_round_trips(rs in arb_ratings()) {
            let xs = binarize(&rs, 3).unwrap();
            let (set, _) = prune_users(&xs, 0, 0).unwrap();
            for (orig, dense) in xs.iter().zip(&set.interactions) {
                prop_assert_eq!(set.id_map.user_index(orig.user_id), Some(dense.user_id));
                prop_assert_eq!(set.id_map.original_item(dense.item_id), orig.item_id);
            }
        }

        #[test]
        fn one_triple_per_positive(rs in arb_ratings(), seed in any::<u64>()) {
            let xs = binarize(&rs, 3).unwrap();
            if let Ok((set, _)) = prune_users(&xs, 1, 1) {
                let ds = pair_negatives(&set, seed).unwrap();
                let positives = set.interactions.iter().filter(|x| x.label == Label::Positive).count();
                prop_assert_eq!(ds.n(), positives);
                for p in &ds.points {
                    if let TrainingPoint::Triple { pos, neg, .. } = *p {
                        prop_assert_ne!(pos, neg);
                    }
                }
                prop_assert_eq!(pair_negatives(&set, seed).unwrap(), ds);
            }
        }
    }
}
