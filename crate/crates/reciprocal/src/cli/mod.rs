//! Command-line surface tying the pipeline together: `prepare`, `train`,
//! `evaluate`, `stream`, and `adjust`, all sharing one run directory and
//! one key-value config file with flag overrides.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage or configuration
//! error.

mod artifacts;
mod commands;
mod config;

pub use artifacts::{load_events, load_run, write_json, write_lists_tsv, Metadata, RunDir};
pub use commands::{cmd_adjust, cmd_evaluate, cmd_prepare, cmd_stream, cmd_train};
pub use config::{DerivedSeeds, ExperimentConfig};

use crate::error::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

/// Which training stages `train` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    /// Pre-train the backbone, then finetune the treatment models.
    Both,
    /// Stop after the backbone checkpoint.
    PretrainOnly,
}

/// Scoring rule used by `evaluate` (and named by `stream` / `adjust` to
/// pick which evaluation's lists to reuse).
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvaluateMode {
    /// The pre-trained backbone scoring both sides.
    Backbone,
    /// Two independently trained per-direction models.
    Dual,
    /// Additive treatment-model scores.
    CrrsSimple,
    /// Vacant-slot reranking over potential outcomes.
    CrrsRerank,
}

impl EvaluateMode {
    pub fn dir_name(self) -> &'static str {
        match self {
            EvaluateMode::Backbone => "backbone",
            EvaluateMode::Dual => "dual",
            EvaluateMode::CrrsSimple => "crrs-simple",
            EvaluateMode::CrrsRerank => "crrs-rerank",
        }
    }
}

impl std::fmt::Display for EvaluateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "reciprocal",
    version,
    about = "Two-sided recommendation pipeline: data preparation, causal training, \
             full-ranking evaluation, streaming metrics, and list adjustment"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate or load interactions, k-core filter, and split them
    Prepare(PrepareArgs),
    /// Pre-train the backbone and finetune the treatment models
    Train(TrainArgs),
    /// Build top-K lists with a scoring rule and report all metrics
    Evaluate(EvaluateArgs),
    /// Replay an evaluation's lists as per-user events
    Stream(StreamArgs),
    /// Rewrite redundant or one-sided hits and re-report
    Adjust(AdjustArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Key-value config file (flat TOML keys)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for all artifacts
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed; component seeds derive from it
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PrepareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Generate a synthetic interaction log instead of loading one
    #[arg(long)]
    synthetic: bool,
    /// Interactions TSV to load
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic side-A user count
    #[arg(long)]
    n: Option<usize>,
    /// Synthetic side-B user count
    #[arg(long)]
    m: Option<usize>,
    /// Synthetic interaction density in (0, 1)
    #[arg(long)]
    density: Option<f64>,
    /// Latent dimension of the synthetic generator
    #[arg(long)]
    synthetic_dim: Option<usize>,
    /// Minimum interactions per kept user (0 disables k-core filtering)
    #[arg(long)]
    kcore: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum, default_value_t = Stage::Both)]
    stage: Stage,
    /// Backbone latent dimension
    #[arg(long)]
    dim: Option<usize>,
    /// Maximum training epochs
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum)]
    mode: EvaluateMode,
    /// Evaluation list length K
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Args)]
struct StreamArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Event file: one `side<TAB>user` per line, in replay order
    #[arg(long)]
    events: PathBuf,
    /// Which evaluation's lists to replay
    #[arg(long, value_enum, default_value_t = EvaluateMode::Backbone)]
    mode: EvaluateMode,
}

#[derive(Debug, Args)]
struct AdjustArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Which evaluation's lists to adjust
    #[arg(long, value_enum, default_value_t = EvaluateMode::Backbone)]
    mode: EvaluateMode,
}

fn resolve(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        config.out = Some(out.clone());
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(args) => {
            let mut config = resolve(&args.common)?;
            if args.synthetic {
                config.synthetic = true;
            }
            if let Some(data) = args.data {
                config.data_path = Some(data);
            }
            if let Some(n) = args.n {
                config.synthetic_n = n;
            }
            if let Some(m) = args.m {
                config.synthetic_m = m;
            }
            if let Some(density) = args.density {
                config.density = density;
            }
            if let Some(dim) = args.synthetic_dim {
                config.synthetic_dim = dim;
            }
            if let Some(kcore) = args.kcore {
                config.kcore = kcore;
            }
            cmd_prepare(&config)
        }
        Command::Train(args) => {
            let mut config = resolve(&args.common)?;
            if let Some(dim) = args.dim {
                config.dim = dim;
            }
            if let Some(epochs) = args.epochs {
                config.max_epochs = epochs;
            }
            if let Some(lr) = args.learning_rate {
                config.learning_rate = lr;
            }
            cmd_train(&config, args.stage)
        }
        Command::Evaluate(args) => {
            let mut config = resolve(&args.common)?;
            if let Some(k) = args.k {
                config.k = k;
            }
            cmd_evaluate(&config, args.mode)
        }
        Command::Stream(args) => {
            let config = resolve(&args.common)?;
            cmd_stream(&config, args.mode, &args.events)
        }
        Command::Adjust(args) => {
            let config = resolve(&args.common)?;
            cmd_adjust(&config, args.mode)
        }
    }
}

/// Parse arguments and run one command, mapping errors to exit codes.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code().clamp(1, 255) as u8)
        }
    }
}
