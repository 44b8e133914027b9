//! `ersinv`: dataset generation, forward modelling, training, evaluation,
//! ablation, noise study, receptive-field report and plotting.
//!
//! Exit codes: 0 success, 1 output failure, 2 usage or configuration error
//! (including missing inputs), 3 forward-solver failure, 4 non-finite value
//! during training.

mod commands;
mod config;
mod error;
mod manifest;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Env, EvalArgs, Split};
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "ersinv",
    version,
    about = "Resistivity inversion with a U-Net surrogate"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Built-in profile (`desk`, `paper`) or `<name>.toml` under ERSINV_PROFILE_DIR.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    /// Overrides the dataset and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "ersinv-out")]
    out: PathBuf,
    /// TOML overrides with [dataset], [network] and [train] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 0 runs single-threaded and deterministic.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true, env = config::PROFILE_DIR_ENV, hide = true)]
    profile_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset: models, pseudo-sections and network inputs.
    Gen {
        /// Total sample count, spread evenly over the five families.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Forward-model a resistivity CSV into Wenner and Wenner-Schlumberger sections.
    Fwd { model: PathBuf },
    /// Train a network on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint on a split, or compare two raster CSVs.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Predicted model CSV.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// True model CSV.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Train and score the tier on/off × loss-variant grid.
    Ablate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint on noisy inputs.
    Noise {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Comma-separated levels in dBw; `clean` means no noise.
        #[arg(long, default_value = "clean,1,3")]
        levels: String,
    },
    /// Per-layer receptive field of the profile's network.
    Rf,
    /// Render a raster CSV to PNG.
    Plot {
        input: PathBuf,
        /// Color by log10 of the values.
        #[arg(long)]
        log: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let c = &cli.common;
    let threads = if c.threads == 0 { 1 } else { c.threads };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let profile = config::resolve(
        &c.profile,
        c.profile_dir.as_deref(),
        c.config.as_deref(),
        c.seed,
    )?;
    let env = Env {
        profile,
        out: &c.out,
        threads: c.threads,
    };
    match &cli.command {
        Command::Gen { samples } => commands::gen(&env, *samples),
        Command::Fwd { model } => commands::fwd(&env, model),
        Command::Train { data } => commands::train(&env, data),
        Command::Eval {
            data,
            checkpoint,
            split,
            pred,
            target,
        } => commands::eval(
            &env,
            &EvalArgs {
                data: data.as_deref(),
                checkpoint: checkpoint.as_deref(),
                split: *split,
                pred: pred.as_deref(),
                target: target.as_deref(),
            },
        ),
        Command::Ablate { data } => commands::ablate(&env, data),
        Command::Noise {
            data,
            checkpoint,
            split,
            levels,
        } => commands::noise(&env, data, checkpoint, *split, levels),
        Command::Rf => commands::rf(&env),
        Command::Plot { input, log } => commands::plot(&env, input, *log),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
