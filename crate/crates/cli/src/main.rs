use std::path::PathBuf;
use std::process::ExitCode;

use btv_cli::session::SEED_ENV;
use btv_cli::{execute, exit, Command, Context};
use clap::Parser;

/// Bayesian test vectors: single-shot detection of faulty or drifting quantized networks.
#[derive(Debug, Parser)]
#[command(name = "btv", version, about)]
struct Cli {
    /// Directory for outputs and run manifests.
    #[arg(long, global = true, default_value = "btv-out")]
    out_dir: PathBuf,
    /// Master seed; overrides BTV_SEED and the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for campaigns (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Context {
        out_dir: cli.out_dir,
        seed_flag: cli.seed,
        env_seed: std::env::var(SEED_ENV).ok(),
        threads: cli.threads,
        quiet: cli.quiet,
    };
    let code = match execute(&ctx, &cli.command) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("{w}");
            }
            for line in &outcome.stdout {
                println!("{line}");
            }
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(u8::try_from(code).unwrap_or(exit::INTERNAL as u8))
}
