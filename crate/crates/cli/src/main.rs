//! `cfx`: ingest ratings, train, explain recommendations, evaluate and run
//! the brute-force oracle.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{FileConfig, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cfx_core::Error),

    #[error("{path}: {source}")]
    In {
        path: PathBuf,
        #[source]
        source: cfx_core::Error,
    },

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Parse(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Attaches a path to a core error unless it already names one.
    pub fn at(path: &Path) -> impl FnOnce(cfx_core::Error) -> CliError + '_ {
        move |e| match e {
            e @ cfx_core::Error::Io { .. } => CliError::Core(e),
            source => CliError::In {
                path: path.to_path_buf(),
                source,
            },
        }
    }

    pub fn exit_code(&self) -> u8 {
        use cfx_core::Error as E;
        let core = match self {
            CliError::Core(e) | CliError::In { source: e, .. } => e,
            CliError::Io { .. } | CliError::Parse(_) => return 2,
        };
        match core {
            E::UnknownId { .. } => 3,
            E::Numeric(_) | E::Divergence { .. } => 4,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cfx", version, about = "Counterfactual explanations for recommenders")]
struct Cli {
    /// TOML config file; command-line flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory [default: out].
    #[arg(long, global = true, env = "CFX_OUT_DIR")]
    out_dir: Option<PathBuf>,

    /// Worker threads for per-user jobs.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Root seed; training init and negative pairing use named substreams.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Binarize and prune ratings, write pointwise and pairwise datasets.
    Ingest(IngestArgs),
    /// Train a model on a dataset artifact.
    Train(TrainArgs),
    /// Explain top recommendations from a checkpoint.
    Explain(ExplainArgs),
    /// Retrain-and-verify evaluation over all users.
    Evaluate(EvalArgs),
    /// Compare methods against exhaustive counterfactual search.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// MovieLens `u.data` ratings file (tab-separated user, item, rating, timestamp).
    #[arg(long, conflicts_with = "synthetic")]
    ratings: Option<PathBuf>,
    /// Generate seeded synthetic ratings instead of reading a file.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    synthetic_users: Option<usize>,
    #[arg(long)]
    synthetic_items: Option<usize>,
    /// Ratings at or above this are positive [default: 3].
    #[arg(long)]
    threshold: Option<u8>,
    /// Minimum positives per user [default: 10].
    #[arg(long)]
    min_pos: Option<usize>,
    /// Minimum negatives per user [default: 10].
    #[arg(long)]
    min_neg: Option<usize>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// `pointwise` or `attention`.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Dataset artifact [default: <out>/dataset.<kind>.json].
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2_reg: Option<f64>,
}

#[derive(Debug, Args)]
struct ExplainSettings {
    #[command(flatten)]
    model: ModelArgs,
    /// Checkpoint [default: <out>/checkpoint.<kind>.json].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Methods, comma separated.
    #[arg(long = "method", value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Recommendation list lengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Hessian damping.
    #[arg(long)]
    damping: Option<f64>,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[command(flatten)]
    settings: ExplainSettings,
    /// User id as it appears in the ratings file.
    #[arg(long, required_unless_present = "all_users", conflicts_with = "all_users")]
    user: Option<u32>,
    #[arg(long)]
    all_users: bool,
    /// Output file [default: <out>/explanations.jsonl]; `-` for stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    settings: ExplainSettings,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    settings: ExplainSettings,
    /// Restrict to one user (original id).
    #[arg(long)]
    user: Option<u32>,
    /// Largest profile the oracle will enumerate.
    #[arg(long)]
    max_profile: Option<usize>,
    /// Largest subset size tried.
    #[arg(long)]
    max_size: Option<usize>,
    /// Resume steps allowed when verifying an explanation.
    #[arg(long)]
    retry_budget: Option<usize>,
}

fn base_overrides(cli: &Cli) -> Overrides {
    Overrides {
        seed: cli.seed,
        out_dir: cli.out_dir.clone(),
        jobs: cli.jobs,
        ..Overrides::default()
    }
}

fn with_settings(mut o: Overrides, s: &ExplainSettings) -> Overrides {
    o.model = s.model.model.clone();
    o.checkpoint = s.checkpoint.clone();
    o.methods = s.methods.clone();
    o.k = s.k.clone();
    o.damping = s.damping;
    o
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let base = base_overrides(&cli);
    match &cli.command {
        Command::Ingest(a) => {
            let o = Overrides {
                ratings: a.ratings.clone(),
                synthetic: a.synthetic,
                synthetic_users: a.synthetic_users,
                synthetic_items: a.synthetic_items,
                threshold: a.threshold,
                min_pos: a.min_pos,
                min_neg: a.min_neg,
                ..base
            };
            commands::ingest(&config::resolve("ingest", file, o)?)
        }
        Command::Train(a) => {
            let o = Overrides {
                model: a.model.model.clone(),
                dataset: a.dataset.clone(),
                dim: a.dim,
                epochs: a.epochs,
                learning_rate: a.learning_rate,
                l2_reg: a.l2_reg,
                ..base
            };
            commands::train(&config::resolve("train", file, o)?)
        }
        Command::Explain(a) => {
            let o = with_settings(base, &a.settings);
            let r = config::resolve("explain", file, o)?;
            commands::explain(r, a.user, a.output.as_deref())
        }
        Command::Evaluate(a) => {
            let o = with_settings(base, &a.settings);
            commands::evaluate(config::resolve("evaluate", file, o)?)
        }
        Command::Oracle(a) => {
            let mut o = with_settings(base, &a.settings);
            o.max_profile = a.max_profile;
            o.max_size = a.max_size;
            o.retry_budget = a.retry_budget;
            commands::oracle(config::resolve("oracle", file, o)?, a.user)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
