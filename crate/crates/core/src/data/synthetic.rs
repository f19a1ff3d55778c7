//! Seeded MovieLens-style rating generator for desk-scale experiments.
//!
//! Users and items get Gaussian latent factors; each user rates a
//! popularity-biased sample of items, liking the best-matching ones (3-5
//! stars) and disliking the worst-matching ones (1-2 stars).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    build_pointwise, pair_negatives, prune_users, Dataset, DatasetKind, Interaction, Label, Rating,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub latent_dim: usize,
    pub min_pos: usize,
    pub max_pos: usize,
    pub min_neg: usize,
    pub max_neg: usize,
    /// Zipf-like exponent of the item popularity curve.
    pub popularity_skew: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 60,
            items: 240,
            latent_dim: 4,
            min_pos: 10,
            max_pos: 13,
            min_neg: 10,
            max_neg: 12,
            popularity_skew: 0.6,
            seed: 7,
        }
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Vec<Rating> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.latent_dim.max(1);
    let latent = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..k).map(|_| StandardNormal.sample(rng)).collect())
            .collect()
    };
    let user_f = latent(cfg.users, &mut rng);
    let item_f = latent(cfg.items, &mut rng);
    let weights: Vec<(usize, f64)> = (0..cfg.items)
        .map(|i| (i, 1.0 / ((i + 5) as f64).powf(cfg.popularity_skew)))
        .collect();

    let mut out = Vec::new();
    let mut clock = 880_000_000i64;
    for (u, uf) in user_f.iter().enumerate() {
        let npos = rng.gen_range(cfg.min_pos..=cfg.max_pos.max(cfg.min_pos));
        let nneg = rng.gen_range(cfg.min_neg..=cfg.max_neg.max(cfg.min_neg));
        let want = (3 * (npos + nneg)).min(cfg.items);
        let mut pool: Vec<usize> = weights
            .choose_multiple_weighted(&mut rng, want, |w| w.1)
            .expect("positive weights")
            .map(|w| w.0)
            .collect();
        pool.sort_unstable();
        let mut scored: Vec<(f64, usize)> = pool
            .into_iter()
            .map(|i| {
                let dot: f64 = uf.iter().zip(&item_f[i]).map(|(a, b)| a * b).sum();
                let noise: f64 = StandardNormal.sample(&mut rng);
                (dot / (k as f64).sqrt() + 0.3 * noise, i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let npos = npos.min(scored.len() / 2);
        let nneg = nneg.min(scored.len() - npos);
        let mut rated: Vec<(usize, u8)> = Vec::with_capacity(npos + nneg);
        for (rank, &(_, i)) in scored[..npos].iter().enumerate() {
            let stars = 5 - (3 * rank / npos.max(1)) as u8;
            rated.push((i, stars));
        }
        for (rank, &(_, i)) in scored[scored.len() - nneg..].iter().enumerate() {
            let stars = if rank < nneg / 2 { 2 } else { 1 };
            rated.push((i, stars));
        }
        rated.sort_unstable();
        for (i, value) in rated {
            clock += rng.gen_range(1..600);
            out.push(Rating {
                user_id: u as u32 + 1,
                item_id: i as u32 + 1,
                value,
                timestamp: clock,
            });
        }
    }
    out
}

/// Small random dataset built directly from interactions: each user gets
/// `per_user` distinct items, alternating positive and negative labels.
pub fn random_dataset(
    kind: DatasetKind,
    users: usize,
    items: usize,
    per_user: usize,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<u32> = (0..items as u32).collect();
    let mut xs = Vec::with_capacity(users * per_user);
    for u in 0..users as u32 {
        let mut picked: Vec<u32> = all
            .choose_multiple(&mut rng, per_user.max(2).min(items))
            .copied()
            .collect();
        picked.sort_unstable();
        let first_label = rng.gen_bool(0.5);
        for (k, i) in picked.into_iter().enumerate() {
            let positive = (k % 2 == 0) == first_label;
            xs.push(Interaction {
                user_id: u,
                item_id: i,
                label: if positive { Label::Positive } else { Label::Negative },
            });
        }
    }
    let (set, _) = prune_users(&xs, 0, 0).expect("non-empty");
    match kind {
        DatasetKind::Pointwise => build_pointwise(&set).expect("non-empty"),
        DatasetKind::Pairwise => pair_negatives(&set, seed).expect("every user has a negative"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::binarize;

    #[test]
    fn deterministic_and_prunable() {
        let cfg = SyntheticConfig::default();
        let a = generate(&cfg);
        assert_eq!(a, generate(&cfg));
        let xs = binarize(&a, 3).unwrap();
        let (set, stats) = prune_users(&xs, 10, 10).unwrap();
        assert_eq!(stats.users_after, cfg.users);
        assert!(set.num_items > 150);
    }
}
