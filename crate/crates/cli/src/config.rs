//! Run configuration: a flat TOML file of optional keys, overridden by flags.

use std::path::{Path, PathBuf};

use cfx_core::eval::OracleCaps;
use cfx_core::explain::Method;
use cfx_core::influence::DEFAULT_DAMPING;
use cfx_core::model::{ModelKind, TrainConfig};
use cfx_core::seed::substream;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_OUT_DIR: &str = "out";

/// Every key is optional; missing keys fall back to flags, then defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    // ingest
    pub ratings: Option<PathBuf>,
    pub synthetic: Option<bool>,
    pub synthetic_users: Option<usize>,
    pub synthetic_items: Option<usize>,
    pub threshold: Option<u8>,
    pub min_pos: Option<usize>,
    pub min_neg: Option<usize>,
    // train
    pub dataset: Option<PathBuf>,
    pub model: Option<String>,
    pub dim: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub l2_reg: Option<f64>,
    // explain / evaluate / oracle
    pub checkpoint: Option<PathBuf>,
    pub methods: Option<Vec<String>>,
    pub k: Option<Vec<usize>>,
    pub damping: Option<f64>,
    pub max_profile: Option<usize>,
    pub max_size: Option<usize>,
    pub retry_budget: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved settings. This is what every output embeds, minus the
/// output directory and job count, which do not affect results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub command: &'static str,
    pub seed: u64,
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub jobs: usize,
    pub ratings: Option<PathBuf>,
    pub synthetic: bool,
    pub synthetic_users: usize,
    pub synthetic_items: usize,
    pub threshold: u8,
    pub min_pos: usize,
    pub min_neg: usize,
    pub dataset: Option<PathBuf>,
    pub model: ModelKind,
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub checkpoint: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub k: Vec<usize>,
    pub damping: f64,
    pub max_profile: usize,
    pub max_size: usize,
    pub retry_budget: usize,
}

/// Command-line values that can override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub ratings: Option<PathBuf>,
    pub synthetic: bool,
    pub synthetic_users: Option<usize>,
    pub synthetic_items: Option<usize>,
    pub threshold: Option<u8>,
    pub min_pos: Option<usize>,
    pub min_neg: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub model: Option<String>,
    pub dim: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub l2_reg: Option<f64>,
    pub checkpoint: Option<PathBuf>,
    pub methods: Option<Vec<String>>,
    pub k: Option<Vec<usize>>,
    pub damping: Option<f64>,
    pub max_profile: Option<usize>,
    pub max_size: Option<usize>,
    pub retry_budget: Option<usize>,
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>, CliError> {
    names
        .iter()
        .map(|n| n.trim().parse::<Method>().map_err(|e| CliError::Parse(e.to_string())))
        .collect()
}

pub fn resolve(command: &'static str, file: FileConfig, cli: Overrides) -> Result<Resolved, CliError> {
    let model: ModelKind = cli
        .model
        .or(file.model)
        .as_deref()
        .unwrap_or("pointwise")
        .parse()
        .map_err(CliError::Parse)?;
    let defaults = TrainConfig::new(model);
    let caps = OracleCaps::default();
    let methods = match cli.methods.or(file.methods) {
        Some(names) => parse_methods(&names)?,
        None => Method::ALL.to_vec(),
    };
    let k = cli.k.or(file.k).unwrap_or_else(|| vec![5, 10, 20]);
    if let Some(bad) = k.iter().find(|&&k| k < 2) {
        return Err(CliError::Parse(format!("k = {bad}: every k must be at least 2")));
    }
    let r = Resolved {
        command,
        seed: cli.seed.or(file.seed).unwrap_or(2024),
        out_dir: cli
            .out_dir
            .or(file.out_dir)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
        jobs: cli.jobs.or(file.jobs).unwrap_or(1).max(1),
        ratings: cli.ratings.or(file.ratings),
        synthetic: cli.synthetic || file.synthetic.unwrap_or(false),
        synthetic_users: cli.synthetic_users.or(file.synthetic_users).unwrap_or(60),
        synthetic_items: cli.synthetic_items.or(file.synthetic_items).unwrap_or(240),
        threshold: cli.threshold.or(file.threshold).unwrap_or(3),
        min_pos: cli.min_pos.or(file.min_pos).unwrap_or(10),
        min_neg: cli.min_neg.or(file.min_neg).unwrap_or(10),
        dataset: cli.dataset.or(file.dataset),
        model,
        dim: cli.dim.or(file.dim).unwrap_or(defaults.dim),
        epochs: cli.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        learning_rate: cli.learning_rate.or(file.learning_rate).unwrap_or(defaults.learning_rate),
        l2_reg: cli.l2_reg.or(file.l2_reg).unwrap_or(defaults.l2_reg),
        checkpoint: cli.checkpoint.or(file.checkpoint),
        methods,
        k,
        damping: cli.damping.or(file.damping).unwrap_or(DEFAULT_DAMPING),
        max_profile: cli.max_profile.or(file.max_profile).unwrap_or(caps.max_profile),
        max_size: cli.max_size.or(file.max_size).unwrap_or(caps.max_size),
        retry_budget: cli.retry_budget.or(file.retry_budget).unwrap_or(3),
    };
    Ok(r)
}

impl Resolved {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            kind: self.model,
            dim: self.dim,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            l2_reg: self.l2_reg,
            seed: substream(self.seed, "init"),
        }
    }

    pub fn pairing_seed(&self) -> u64 {
        substream(self.seed, "pairing")
    }

    pub fn synthetic_seed(&self) -> u64 {
        substream(self.seed, "synthetic")
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset
            .clone()
            .unwrap_or_else(|| self.out(&format!("dataset.{}.json", self.model.dataset_kind().as_str())))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out(&format!("checkpoint.{}.json", self.model.as_str())))
    }

    pub fn caps(&self) -> OracleCaps {
        OracleCaps {
            max_profile: self.max_profile,
            max_size: self.max_size,
        }
    }
}
