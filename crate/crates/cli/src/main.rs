use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use wavefield_cli::{run, Command};

/// Wave-layer experiments: gradient checks, integrator studies, training,
/// medium dumps and scaling benchmarks.
#[derive(Parser, Debug)]
#[command(name = "wavefield", version)]
struct Args {
    command: Command,
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Progress on stderr.
    #[arg(short, long)]
    verbose: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args.command, &args.config, args.seed, args.out, args.verbose) {
        Ok(outcome) => {
            for m in &outcome.messages {
                eprintln!("{m}");
            }
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("wavefield: checks failed");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("wavefield: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
