//! Command-line pipelines: extraction, screening, training, tracking,
//! evaluation and simulation.

pub mod commands;
pub mod config;
pub mod plot;
pub mod store;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lipt_core::CoreError;

use crate::commands::RunContext;
use crate::config::RunConfig;
use crate::store::Split;

/// Bad input or configuration; exits with status 1.
#[derive(Debug)]
pub struct Validation(pub String);

impl fmt::Display for Validation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Validation {}

#[derive(Debug, Parser)]
#[command(name = "lipt", version, about = "Longitudinal vocal biomarker tracking")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Extraction worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Frame and global features for every recording of an audio manifest.
    Extract {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Paired and independent t-test screening of global features.
    Screen {
        #[arg(long)]
        pre: Option<PathBuf>,
        #[arg(long)]
        post: Option<PathBuf>,
        /// Screen admission against discharge visits of the training split.
        #[arg(long, conflicts_with_all = ["pre", "post"])]
        manifest: Option<PathBuf>,
    },
    /// Reconstruction pretraining of the sequential encoder.
    Pretrain {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Pairwise comparator training and test evaluation.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Start from a pretrained encoder checkpoint.
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Pairwise outcomes, aggregated trajectories and visit rankings.
    Track {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
    },
    /// Metrics, ROC curve and confusion matrix for scored predictions.
    Eval {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Synthetic cohort with analytic reference accuracies.
    Simulate {
        /// Also compare the cross-sectional and pairwise paradigms.
        #[arg(long)]
        benchmark: bool,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    Followup,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
            SplitArg::Followup => Split::Followup,
        }
    }
}

pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), cli.seed)?;
    let ctx = RunContext { cfg, out: cli.out.clone(), workers: cli.workers };
    match &cli.command {
        Command::Extract { manifest } => commands::extract(&ctx, manifest.as_deref()),
        Command::Screen { pre, post, manifest } => {
            commands::screen(&ctx, pre.as_deref(), post.as_deref(), manifest.as_deref())
        }
        Command::Pretrain { manifest } => commands::pretrain(&ctx, manifest.as_deref()),
        Command::Train { manifest, pretrained } => commands::train(&ctx, manifest.as_deref(), pretrained.as_deref()),
        Command::Track { manifest, checkpoint, split } => {
            commands::track(&ctx, manifest.as_deref(), checkpoint.as_deref(), split.map(Split::from))
        }
        Command::Eval { predictions, labels } => commands::eval(&ctx, predictions.as_deref(), labels.as_deref()),
        Command::Simulate { benchmark } => commands::simulate(&ctx, *benchmark),
    }
}

/// 1 for validation failures, 2 for everything else.
pub fn exit_status(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Validation>() || cause.is::<toml::de::Error>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Invalid(_)
                | CoreError::UnknownStrategy { .. }
                | CoreError::CatalogMismatch { .. }
                | CoreError::UnsupportedEncoding(_)
                | CoreError::Checkpoint(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
