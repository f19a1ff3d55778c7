use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainReport, TrainedModel};
use crate::data::Dataset;
use crate::{Error, Result};

pub const CHECKPOINT_SCHEMA: &str = "cfx.checkpoint/v1";

#[derive(Serialize)]
struct CheckpointRef<'a> {
    schema: &'static str,
    config: &'a TrainConfig,
    report: &'a TrainReport,
    theta: &'a [f64],
    dataset: &'a Dataset,
}

#[derive(Deserialize)]
struct CheckpointOwned {
    schema: String,
    config: TrainConfig,
    report: TrainReport,
    theta: Vec<f64>,
    dataset: Dataset,
}

/// Writes config, training report, parameters and the bound dataset
/// (including its id maps) as one JSON document.
pub fn save_checkpoint(path: impl AsRef<Path>, model: &TrainedModel) -> Result<()> {
    let path = path.as_ref();
    let doc = CheckpointRef {
        schema: CHECKPOINT_SCHEMA,
        config: &model.config,
        report: &model.report,
        theta: &model.theta,
        dataset: model.dataset(),
    };
    let text = serde_json::to_string(&doc)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: CheckpointOwned = serde_json::from_str(&text)?;
    if doc.schema != CHECKPOINT_SCHEMA {
        return Err(Error::Parse {
            line: 1,
            reason: format!("unsupported checkpoint schema {:?}", doc.schema),
        });
    }
    let mut model = TrainedModel::from_params(doc.config, Arc::new(doc.dataset), doc.theta)?;
    model.report = doc.report;
    Ok(model)
}
