use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use almreg::config::ExperimentConfig;
use almreg::driver::{cmd_check, cmd_solve, cmd_sweep, DriverError};

/// Augmented Lagrangian regularization of linear ill-posed problems.
#[derive(Parser)]
#[command(name = "almreg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for result files.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Size of the worker pool for sweep cells.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Replace the configured noise seeds with a single seed.
    #[arg(long, global = true, value_name = "S")]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one (delta, seed) cell and write per-iteration records.
    Solve,
    /// Run the delta x seed grid and write records plus a rate summary.
    Sweep,
    /// Run the invariant battery and print a pass/fail table.
    Check,
}

fn execute(cli: &Cli) -> Result<(), DriverError> {
    let path = cli.config.as_ref().ok_or_else(|| {
        DriverError::Usage("--config PATH is required".into())
    })?;
    let cfg = ExperimentConfig::from_path(path)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| DriverError::Usage(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Solve => cmd_solve(&cfg, &cli.out, cli.seed_override),
        Command::Sweep => cmd_sweep(&cfg, &cli.out, cli.seed_override),
        Command::Check => cmd_check(&cfg, cli.seed_override),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
