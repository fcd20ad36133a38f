//! `ugn`: the uncertainty-gated segmentation pipeline in one binary.
//!
//! Every subcommand takes the same arguments: an optional `--config` file
//! of flat `key = value` lines plus trailing `--key value` overrides (the
//! overrides win). Unknown keys are errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ugn_cli::Command as Pipeline;

#[derive(Parser)]
#[command(
    name = "ugn",
    about = "Uncertainty-gated convolutional segmentation, desk scale",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Config file of `key = value` lines (`#` starts a comment).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides as `--key value` or `--key=value`, applied after the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Voronoi land-cover dataset.
    Synth(RunArgs),
    /// Train a model, checkpointing every epoch.
    Train(RunArgs),
    /// Segment the validation images with a trained checkpoint.
    Infer(RunArgs),
    /// Score a trained checkpoint against the validation labels.
    Eval(RunArgs),
    /// Run the gradient and invariant self-test suite.
    Gradcheck(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (pipeline, args) = match &cli.command {
        Command::Synth(a) => (Pipeline::Synth, a),
        Command::Train(a) => (Pipeline::Train, a),
        Command::Infer(a) => (Pipeline::Infer, a),
        Command::Eval(a) => (Pipeline::Eval, a),
        Command::Gradcheck(a) => (Pipeline::Gradcheck, a),
    };
    match ugn_cli::dispatch(pipeline, args.config.as_deref(), &args.overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
