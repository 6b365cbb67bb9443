//! `dtp`: generate scenes, train models, draw samples and run the
//! evaluations from the command line.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 when a data file,
//! checkpoint or config cannot be used.

mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dtp_core::eval::BandwidthFit;
use dtp_core::model::ModelKind;

pub use config::RunConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn data(path: &Path, err: impl fmt::Display) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<dtp_core::Error> for CliError {
    fn from(e: dtp_core::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "dtp", version, about = "Dense trajectory prediction with a conditional VAE")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// TOML file overriding default settings.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene dataset.
    GenData {
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Train a CVAE or the direct regressor.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "cvae")]
        kind: ModelKind,
        #[arg(long)]
        epochs: Option<usize>,
        /// Per-epoch loss CSV (default: next to the checkpoint).
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Draw predictions for one scene and render them.
    Sample {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 5)]
        n: usize,
    },
    /// Parzen-window likelihood table on the test split.
    EvalNll {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, default_value = "val")]
        bandwidth_fit: BandwidthFit,
        /// Where the regressor and constant-velocity bandwidths are fitted.
        #[arg(long, default_value = "test")]
        baseline_fit: BandwidthFit,
        /// Also write per-image negative log-likelihoods here.
        #[arg(long)]
        per_image: Option<PathBuf>,
    },
    /// Mean minimum Euclidean distance to the ground truth over n samples.
    EvalMined {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        n_max: Option<usize>,
    },
    /// Cluster many samples for one scene and render the top centroids.
    Cluster {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Decode along a line between the posterior means of two modes.
    Interpolate {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Render a scene's ground truth, or one of its noise-free modes.
    Render {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        mode: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct SceneArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    index: usize,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// CVAE checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Regressor checkpoint; enables the regressor and constant-velocity rows.
    #[arg(long)]
    regressor: Option<PathBuf>,
    /// Evaluate only the first this many test scenes.
    #[arg(long)]
    limit: Option<usize>,
}

/// Runs the tool on `argv` (program name first) and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let threads = match std::env::var("DTP_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .map_err(|_| CliError::usage(format!("DTP_THREADS must be a thread count, got {v:?}")))?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start {threads} worker threads: {e}")))?;
    let config = RunConfig::load_or_default(cli.common.config.as_deref())?;
    let ctx = commands::Context {
        seed: cli.common.seed,
        out: cli.common.out,
        config,
    };
    pool.install(|| commands::execute(&ctx, cli.command))
}
