//! Library half of the `ugn` binary: config parsing, the checkpoint
//! container, and the command implementations, exposed so integration
//! tests can drive them without spawning processes.

pub mod checkpoint;
pub mod commands;
pub mod config;

use std::path::Path;

use anyhow::{bail, Result};

use config::RunConfig;

/// The five pipeline commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Train,
    Infer,
    Eval,
    Gradcheck,
}

/// Parses the configuration and runs one command to completion.
pub fn dispatch(command: Command, file: Option<&Path>, overrides: &[String]) -> Result<()> {
    let cfg = RunConfig::load(file, overrides)?;
    match command {
        Command::Synth => commands::synth::run(&cfg),
        Command::Train => commands::train::run(&cfg),
        Command::Infer => commands::infer::run(&cfg),
        Command::Eval => commands::eval::run(&cfg),
        Command::Gradcheck => gradcheck(&cfg),
    }
}

/// Runs the library's gradient/invariant self-test suite, printing one line
/// per check and failing when any check fails.
fn gradcheck(cfg: &RunConfig) -> Result<()> {
    let results = ugn_core::selfcheck::run(cfg.gradcheck_trials);
    let failed = results.iter().filter(|r| !r.passed).count();
    for r in &results {
        println!("{r}");
    }
    println!(
        "{} of {} checks passed ({} trials per operator)",
        results.len() - failed,
        results.len(),
        cfg.gradcheck_trials
    );
    if failed > 0 {
        bail!("{failed} of {} checks failed", results.len());
    }
    Ok(())
}
