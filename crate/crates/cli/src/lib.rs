//! Experiment runner for the `wavefield` crate: every subcommand reads one
//! TOML configuration and writes CSV files (plus parameter files for
//! training runs) into an output directory.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::{Path, PathBuf};

use clap::ValueEnum;

use crate::commands::{Context, Outcome};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Gradcheck,
    DtSweep,
    Wecs,
    Train,
    DumpMedium,
    Bench,
}

/// Loads the configuration, applies overrides and runs `command`.
pub fn run(command: Command, config: &Path, seed: Option<u64>, out: Option<PathBuf>, verbose: bool) -> Result<Outcome> {
    let cfg = ExperimentConfig::load(config)?;
    let out_dir = out
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    let ctx = Context {
        config: &cfg,
        seed: seed.or(cfg.seed),
        out_dir: &out_dir,
        verbose: verbose || cfg.verbose,
    };
    match command {
        Command::Gradcheck => commands::gradcheck(&ctx),
        Command::DtSweep => commands::dt_sweep(&ctx),
        Command::Wecs => commands::wecs(&ctx),
        Command::Train => commands::train(&ctx),
        Command::DumpMedium => commands::dump_medium(&ctx),
        Command::Bench => commands::bench(&ctx),
    }
}
