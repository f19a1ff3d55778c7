use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::data::synthetic::random_dataset;
use crate::data::{Dataset, DatasetKind, IdMap, Label};
use crate::model::{train, TrainConfig, TrainedModel};

fn trained(kind: ModelKind, seed: u64, l2: f64) -> TrainedModel {
    let ds = random_dataset(kind.dataset_kind(), 8, 16, 8, seed);
    let cfg = TrainConfig {
        kind,
        dim: 3,
        learning_rate: 0.5,
        epochs: 150,
        l2_reg: l2,
        seed,
    };
    train(Arc::new(ds), &cfg).unwrap()
}

fn first_action(m: &TrainedModel) -> usize {
    m.dataset()
        .points
        .iter()
        .position(|p| p.action_item().is_some())
        .unwrap()
}

#[test]
fn zero_gradient_gives_zero_delta() {
    let ds = random_dataset(DatasetKind::Pointwise, 3, 6, 4, 1);
    let mut cfg = TrainConfig::new(ModelKind::Pointwise);
    cfg.dim = 2;
    let len = (ds.num_users + ds.num_items) * 2 + 3;
    let m = TrainedModel::from_params(cfg, Arc::new(ds), vec![0.0; len]).unwrap();
    let d = removal_delta(&m, 0, &InfluenceConfig::default()).unwrap();
    assert!(d.is_zero());
    assert_eq!(d.entries.len(), 4);
}

#[test]
fn damping_shrinks_delta_monotonically() {
    for kind in [ModelKind::Pointwise, ModelKind::Attention] {
        let m = trained(kind, 3, 0.01);
        let z = first_action(&m);
        let mut last = f64::INFINITY;
        let mut solved = 0;
        for lam in [1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0, 1e6] {
            match removal_delta(&m, z, &InfluenceConfig::with_damping(lam)) {
                Ok(d) => {
                    let norm = d.norm();
                    assert!(norm <= last * (1.0 + 1e-12), "{kind:?} λ={lam}: {norm} > {last}");
                    last = norm;
                    solved += 1;
                }
                Err(Error::Numeric(_)) => assert_eq!(solved, 0, "factorization failed after succeeding"),
                Err(e) => panic!("{e}"),
            }
        }
        assert!(solved >= 4);
        assert!(last < 1e-6);
    }
}

#[test]
fn negative_damping_rejected() {
    let m = trained(ModelKind::Pointwise, 1, 0.01);
    assert!(removal_delta(&m, 0, &InfluenceConfig::with_damping(-1.0)).is_err());
    assert!(removal_delta(&m, 10_000, &InfluenceConfig::default()).is_err());
}

#[test]
fn untouched_targets_have_zero_influence() {
    let m = trained(ModelKind::Pointwise, 5, 0.01);
    let cfg = InfluenceConfig::default();
    let z = first_action(&m);
    let zp = m.dataset().points[z];
    let zi = zp.action_item().unwrap();
    let r = Removal::compute(&m, z, &cfg).unwrap();
    for v in 0..m.dataset().num_users as u32 {
        for i in 0..m.dataset().num_items as u32 {
            if v != zp.user() && i != zi {
                assert_eq!(r.influence_on(&m, v, i).unwrap(), 0.0);
            }
        }
    }

    let m = trained(ModelKind::Attention, 5, 0.01);
    let z = first_action(&m);
    let zp = m.dataset().points[z];
    let s = restricted_coords(&m, &zp, Restriction::TouchedEmbeddings);
    let rows: Vec<usize> = s.iter().filter_map(|&c| m.layout.row_of(c)).collect();
    let nu = m.layout.num_users;
    let r = Removal::compute(&m, z, &cfg).unwrap();
    for v in 0..nu as u32 {
        if v == zp.user() {
            continue;
        }
        for i in 0..m.dataset().num_items as u32 {
            let reads = std::iter::once(i)
                .chain(m.dataset().profile(v).iter().copied())
                .any(|j| rows.contains(&(nu + j as usize)));
            if !reads {
                assert_eq!(r.influence_on(&m, v, i).unwrap(), 0.0);
            }
        }
    }
}

#[test]
fn gap_influence_rules() {
    let m = trained(ModelKind::Attention, 2, 0.01);
    let cfg = InfluenceConfig::default();
    let z = first_action(&m);
    let u = m.dataset().points[z].user();
    let top = m.topk(u, 3, None).unwrap();
    let (i, j) = (top[0].0, top[1].0);
    assert!(influence_on_gap(&m, z, u, i, i, &cfg).is_err());
    let a = influence_on_gap(&m, z, u, i, j, &cfg).unwrap();
    let b = influence_on_gap(&m, z, u, j, i, &cfg).unwrap();
    assert_eq!(a.gap_influence, -b.gap_influence);
    let si = influence_on_score(&m, z, u, i, &cfg).unwrap();
    let sj = influence_on_score(&m, z, u, j, &cfg).unwrap();
    assert_eq!(a.gap_influence, si - sj);

    // pointwise: an alternative untouched by z contributes nothing
    let m = trained(ModelKind::Pointwise, 2, 0.01);
    let z = first_action(&m);
    let zp = m.dataset().points[z];
    let other_user = (zp.user() + 1) % m.dataset().num_users as u32;
    let alt = (0..m.dataset().num_items as u32)
        .find(|&x| Some(x) != zp.action_item())
        .unwrap();
    let r = influence_on_gap(&m, z, other_user, zp.action_item().unwrap(), alt, &cfg).unwrap();
    assert_eq!(r.score_influence_alt, 0.0);
    assert_eq!(r.gap_influence, r.score_influence_rec);
}

#[test]
fn set_influence_examples() {
    let rec = |g: f64| InfluenceRecord {
        point: 0,
        user: 1,
        item: 2,
        alt: 3,
        score_influence_rec: g,
        score_influence_alt: 0.0,
        gap_influence: g,
    };
    assert_eq!(set_influence(&[]).unwrap(), 0.0);
    let s = set_influence(&[rec(0.4), rec(0.2), rec(-0.1)]).unwrap();
    assert!((s - 0.5).abs() < 1e-15);
    assert_eq!(set_influence(&[rec(0.3)]).unwrap(), 0.3);
    let mut odd = rec(0.1);
    odd.alt = 9;
    assert!(set_influence(&[rec(0.1), odd]).is_err());
}

#[test]
fn true_influence_of_nothing_is_zero() {
    let m = trained(ModelKind::Pointwise, 4, 0.01);
    assert_eq!(true_influence(&m, &[], 0, 0, 1).unwrap(), 0.0);
    assert!(true_influence(&m, &[0, 1], 0, 0, 1).unwrap().is_finite());
}

#[test]
fn retraining_on_everything_reproduces_the_model() {
    let m = trained(ModelKind::Attention, 4, 0.01);
    let again = crate::model::train(m.dataset_arc().clone(), &m.config).unwrap();
    assert_eq!(again.theta, m.theta);
}

/// Three users; users 1 and 2 like items 0 and 1 together. User 0 likes
/// item 0 and has not seen item 1.
fn similar_items_toy() -> TrainedModel {
    let pos = |u: u32, i: u32| TrainingPoint::Pointwise { user: u, item: i, label: Label::Positive };
    let neg = |u: u32, i: u32| TrainingPoint::Pointwise { user: u, item: i, label: Label::Negative };
    let points = vec![
        pos(0, 0),
        neg(0, 2),
        neg(0, 3),
        pos(1, 0),
        pos(1, 1),
        neg(1, 2),
        neg(1, 3),
        pos(2, 0),
        pos(2, 1),
        neg(2, 2),
        neg(2, 3),
    ];
    let ds = Dataset {
        kind: DatasetKind::Pointwise,
        num_users: 3,
        num_items: 4,
        profiles: crate::data::profiles_of(3, &points),
        seen: vec![vec![0, 2, 3], vec![0, 1, 2, 3], vec![0, 1, 2, 3]],
        points,
        id_map: IdMap {
            users: vec![0, 1, 2],
            items: vec![0, 1, 2, 3],
        },
    };
    let cfg = TrainConfig {
        kind: ModelKind::Pointwise,
        dim: 2,
        learning_rate: 0.5,
        epochs: 3000,
        l2_reg: 0.001,
        seed: 11,
    };
    train(Arc::new(ds), &cfg).unwrap()
}

#[test]
fn removing_a_liked_similar_item_lowers_the_score() {
    let m = similar_items_toy();
    let cfg = InfluenceConfig::with_damping(1e-6);
    assert!(m.theta.iter().any(|v| v.abs() > 0.1), "collapsed to zero");
    let est = influence_on_score(&m, 0, 0, 1, &cfg).unwrap();
    let retrained = retrain_without(&m, &[0]).unwrap();
    let truth = m.score(0, 1).unwrap() - retrained.score(0, 1).unwrap();
    assert!(est > 0.0, "estimate {est}");
    assert!(truth > 0.0, "truth {truth}");
}

#[test]
fn frozen_user_block_matches_exact_leave_one_out() {
    let ds = random_dataset(DatasetKind::Pointwise, 6, 60, 40, 21);
    let cfg = TrainConfig {
        kind: ModelKind::Pointwise,
        dim: 3,
        learning_rate: 0.5,
        epochs: 200,
        l2_reg: 0.05,
        seed: 2,
    };
    let m = train(Arc::new(ds), &cfg).unwrap();
    let problem = FrozenUserProblem::new(&m, 0).unwrap();
    let fitted = problem.solve(&[]).unwrap();
    let g: f64 = fitted
        .block_gradient(&fitted.layout.user_coords(0).collect::<Vec<_>>(), &[])
        .iter()
        .map(|x| x.abs())
        .sum();
    assert!(g < 1e-12, "gradient {g}");
    let icfg = InfluenceConfig {
        damping: 0.0,
        restriction: Restriction::UserOnly,
        ..InfluenceConfig::default()
    };
    let mut checked = 0;
    for (k, z) in fitted.dataset().points.clone().iter().enumerate() {
        if z.user() != 0 {
            continue;
        }
        let TrainingPoint::Pointwise { item, .. } = *z else { unreachable!() };
        let est = influence_on_score(&fitted, k, 0, item, &icfg).unwrap();
        let loo = problem.solve(&[k]).unwrap();
        let truth = fitted.score(0, item).unwrap() - loo.score(0, item).unwrap();
        let rel = (est - truth).abs() / truth.abs();
        assert!(rel < 0.05, "point {k}: est {est} truth {truth}");
        checked += 1;
    }
    assert!(checked >= 30);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gap_identity_and_additivity(seed in 0u64..500, attention in any::<bool>()) {
        let kind = if attention { ModelKind::Attention } else { ModelKind::Pointwise };
        let m = trained(kind, seed, 0.02);
        let cfg = InfluenceConfig::default();
        let u = m.dataset().points[0].user();
        let top = m.topk(u, 2, None).unwrap();
        prop_assume!(top.len() == 2);
        let (i, j) = (top[0].0, top[1].0);
        let mut records = Vec::new();
        for (k, z) in m.dataset().points.iter().enumerate() {
            if z.user() != u || z.action_item().is_none() {
                continue;
            }
            let r = influence_on_gap(&m, k, u, i, j, &cfg).unwrap();
            let removal = Removal::compute(&m, k, &cfg).unwrap();
            let direct = removal.influence_on(&m, u, i).unwrap() - removal.influence_on(&m, u, j).unwrap();
            prop_assert_eq!(r.gap_influence, direct);
            records.push(r);
        }
        let mid = records.len() / 2;
        let whole = set_influence(&records).unwrap();
        let parts = set_influence(&records[..mid]).unwrap() + set_influence(&records[mid..]).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-12 * whole.abs().max(1.0));
    }
}
