//! Deterministic full-batch trainer.
//!
//! Each embedding row steps along the mean gradient of the points that read
//! it (the full-batch gradient rescaled by `n / count`), and weight decay is
//! applied as the matching proximal shrink. The fixed point is a stationary
//! point of the empirical risk, independent of the per-row scaling.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_kind, ModelKind, TrainConfig, TrainedModel};
use crate::data::Dataset;
use crate::{Error, Result};

pub const INIT_STD: f64 = 0.5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss at the start of every epoch.
    pub epoch_loss: Vec<f64>,
    pub final_loss: f64,
    /// Euclidean norm of the empirical-risk gradient at the returned parameters.
    pub grad_norm: f64,
}

pub fn train(dataset: Arc<Dataset>, config: &TrainConfig) -> Result<TrainedModel> {
    train_inner(dataset, config, true)
}

/// Training without the per-epoch loss log; used by retraining jobs.
pub(crate) fn train_quiet(dataset: Arc<Dataset>, config: &TrainConfig) -> Result<TrainedModel> {
    train_inner(dataset, config, false)
}

fn train_inner(dataset: Arc<Dataset>, config: &TrainConfig, log: bool) -> Result<TrainedModel> {
    config.validate()?;
    check_kind(config.kind, &dataset)?;
    let mut model = TrainedModel::assemble(*config, dataset, Vec::new(), TrainReport::default());
    let layout = model.layout;
    let d = layout.dim;
    let n = model.n() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut theta: Vec<f64> = (0..layout.len()).map(|_| normal.sample(&mut rng)).collect();
    if config.kind == ModelKind::Pointwise {
        theta[layout.head() + d] = 0.0;
    }

    // per-coordinate step size and proximal shrink factor
    let lr = config.learning_rate;
    let l2 = config.l2_reg;
    let mut step = vec![lr; layout.len()];
    let mut shrink = vec![1.0 / (1.0 + 2.0 * lr * l2); layout.len()];
    if config.kind == ModelKind::Pointwise {
        shrink[layout.head() + d] = 1.0;
    }
    let index = model.index();
    for row in 0..layout.num_users + layout.num_items {
        let touched = index.row_points[row].len();
        let range = row * d..(row + 1) * d;
        if touched == 0 {
            step[range.clone()].fill(0.0);
            shrink[range].fill(1.0);
            continue;
        }
        let scale = n / touched as f64;
        let ratio = index.row_reg[row] as f64 / touched as f64;
        step[range.clone()].fill(lr * scale);
        shrink[range].fill(1.0 / (1.0 + 2.0 * lr * l2 * ratio));
    }

    let mut epoch_loss = Vec::with_capacity(if log { config.epochs } else { 0 });
    let mut grad = vec![0.0; layout.len()];
    for epoch in 0..config.epochs {
        grad.fill(0.0);
        let kern = model.kernel();
        let view = |c: usize| theta[c];
        let mut data_loss = 0.0;
        for z in &model.dataset().points {
            data_loss += kern.point_grad(&view, z, false, &mut |c, g: f64| grad[c] += g);
        }
        if !data_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        if log {
            let reg: f64 = model
                .dataset()
                .points
                .iter()
                .map(|z| kern.reg_value(&view, z))
                .sum();
            epoch_loss.push((data_loss + reg) / n);
        }
        for c in 0..theta.len() {
            theta[c] = (theta[c] - step[c] * grad[c] / n) * shrink[c];
        }
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Divergence {
            epoch: config.epochs,
        });
    }
    model.theta = theta;
    let final_loss = model.risk();
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            epoch: config.epochs,
        });
    }
    let g = model.risk_gradient_at(&model.theta);
    model.report = TrainReport {
        epoch_loss,
        final_loss,
        grad_norm: g.iter().map(|v| v * v).sum::<f64>().sqrt(),
    };
    Ok(model)
}
