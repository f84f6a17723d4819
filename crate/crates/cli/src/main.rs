//! `photongest`: dataset generation, training, evaluation, and profiling
//! for gesture models on 8×8 photon-counting frames.
//!
//! Exit codes: 0 success, 1 usage, 2 data/file problems, 3 numeric or
//! training failure.

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use photongest_core::Error;

#[derive(Parser)]
#[command(name = "photongest", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic gesture dataset in the native format.
    Synth(SynthArgs),
    /// Train a model and write the best checkpoint plus history.
    Train(TrainArgs),
    /// Evaluate a checkpoint, optionally under ambient light.
    Eval(EvalArgs),
    /// Profile a checkpoint: operation counts, spike rates, timing.
    Profile(ProfileArgs),
    /// Convert a local copy of the released dataset to the native format.
    Import(ImportArgs),
}

#[derive(Args)]
struct CommonOut {
    /// Output directory (default: $PHOTONGEST_OUT_DIR or the working dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional run-config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the metrics report as key,value CSV instead of structured text.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonOut,
    /// Frames per class (11 classes); default 100.
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Max rotation magnitude in degrees.
    #[arg(long)]
    rotation: Option<f64>,
    /// Expected signal photons per frame.
    #[arg(long)]
    budget: Option<f64>,
    /// Expected stray photons per pixel.
    #[arg(long)]
    background: Option<f64>,
    /// Silhouette raster size before 8×8 downsampling.
    #[arg(long)]
    render_size: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonOut,
    /// Dataset directory (native format).
    #[arg(long)]
    data: PathBuf,
    /// Architecture: `cnn`, `scnn`, `smlp`, or a config file path; default scnn.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    timesteps: Option<usize>,
    /// Fraction of the dataset held out for validation.
    #[arg(long)]
    val_ratio: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonOut,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test dataset directory (native format).
    #[arg(long)]
    data: PathBuf,
    /// Ambient-light rate λ_bg injected before normalization.
    #[arg(long)]
    ambient: Option<f64>,
    /// Number of encoder seeds to average over; default 1.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    common: CommonOut,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset used to measure spike rates and timing.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct ImportArgs {
    #[command(flatten)]
    common: CommonOut,
    /// Root of the released dataset split to convert.
    #[arg(long)]
    src: PathBuf,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Domain(_) | Error::Contract(_) => 1,
        Error::Parse { .. }
        | Error::Format(_)
        | Error::Import(_)
        | Error::Data(_)
        | Error::Validation(_)
        | Error::Integrity(_)
        | Error::Io(_) => 2,
        Error::Optimizer(_) | Error::Diverged(_) | Error::Dim(_) | Error::Index(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let invocation: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Synth(args) => commands::cmd_synth(args, &invocation),
        Command::Train(args) => commands::cmd_train(args, &invocation),
        Command::Eval(args) => commands::cmd_eval(args, &invocation),
        Command::Profile(args) => commands::cmd_profile(args, &invocation),
        Command::Import(args) => commands::cmd_import(args, &invocation),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
