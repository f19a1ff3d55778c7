use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::{Error, Result};

pub const DATASET_SCHEMA: &str = "cfx.dataset/v1";

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    schema: String,
    #[serde(flatten)]
    body: T,
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let env = Envelope {
        schema: DATASET_SCHEMA.to_string(),
        body: ds,
    };
    let text = serde_json::to_string(&env)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let env: Envelope<Dataset> = serde_json::from_str(&text)?;
    if env.schema != DATASET_SCHEMA {
        return Err(Error::Parse {
            line: 1,
            reason: format!("unsupported dataset schema {:?}", env.schema),
        });
    }
    Ok(env.body)
}
