//! `ldct`: simulate paired low-dose CT data, train the U-Net, enhance,
//! evaluate and run the blinded reader study.

mod enhance;
mod evaluate;
mod simulate;
mod study;
mod train;

use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ldct", version, about = "Low-dose CT enhancement workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate full/quarter-dose pairs from random phantoms.
    Simulate(simulate::Args),
    /// Train the U-Net on a pair manifest.
    Train(train::Args),
    /// Run a checkpoint over one image or every pair of a manifest.
    Enhance(enhance::Args),
    /// Correlation and PSNR report for full, quarter and enhanced images.
    Evaluate(evaluate::Args),
    /// Blinded opinion-score study.
    #[command(subcommand)]
    Study(study::Command),
}

/// `LDCT_THREADS` caps the worker pool; results do not depend on its value.
fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("LDCT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("LDCT_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Train(a) => train::run(a),
        Command::Enhance(a) => enhance::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Study(c) => study::run(c),
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ldct: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
