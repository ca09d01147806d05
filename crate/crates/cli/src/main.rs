//! Command-line harness for the pose estimator: train, evaluate, inspect a
//! single sample, and run the ablation table.

use anyhow::Result;
use clap::{Args, Parser};
use std::path::PathBuf;

use handgcn_cli::commands::{self, RunArgs};
use handgcn_cli::datasets::DatasetKind;

/// Flags shared by every subcommand. Not all of them apply everywhere;
/// a subcommand rejects the ones it cannot honour instead of ignoring them.
#[derive(Debug, Args)]
struct CommonArgs {
    /// Dataset to run on.
    #[arg(long, value_enum, default_value_t = DatasetKind::Synth)]
    dataset: DatasetKind,

    /// Root directory of a downloaded dataset (required for rhd and stb).
    #[arg(long)]
    data_root: Option<PathBuf>,

    /// TOML configuration file; omitted sections fall back to defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Checkpoint to resume from (train) or to load (eval, inspect).
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Output directory; created if absent, locked while the run lasts.
    #[arg(long, default_value = "runs")]
    out: PathBuf,

    /// Training seed, overriding the configured one.
    #[arg(long)]
    seed: Option<u64>,

    /// Training stage: coarse or refinement.
    #[arg(long)]
    stage: Option<String>,

    /// Model variant: full or baseline-a … baseline-d.
    #[arg(long)]
    variant: Option<String>,

    /// Cap on optimization steps, overriding the configured epoch budget.
    #[arg(long)]
    steps: Option<usize>,
}

impl CommonArgs {
    fn into_run_args(self) -> RunArgs {
        RunArgs {
            dataset: self.dataset,
            data_root: self.data_root,
            config: self.config,
            checkpoint: self.checkpoint,
            out: self.out,
            seed: self.seed,
            stage: self.stage,
            variant: self.variant,
            steps: self.steps,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "handgcn",
    version,
    about = "Hand pose estimation with per-pose relation graphs"
)]
enum Cli {
    /// Train one stage (coarse or refinement) on a dataset.
    Train(CommonArgs),
    /// Evaluate a checkpoint on a dataset's evaluation split.
    Eval(CommonArgs),
    /// Render predictions and relation matrices for one sample.
    Inspect(CommonArgs),
    /// Train and score all five model variants, writing the comparison table.
    Ablate(CommonArgs),
}

fn main() -> Result<()> {
    match Cli::parse() {
        Cli::Train(args) => commands::cmd_train(&args.into_run_args()),
        Cli::Eval(args) => commands::cmd_eval(&args.into_run_args()),
        Cli::Inspect(args) => commands::cmd_inspect(&args.into_run_args()),
        Cli::Ablate(args) => commands::cmd_ablate(&args.into_run_args()),
    }
}
