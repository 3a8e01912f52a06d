use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fraudctl::commands;

/// Dynamic fraud-control experiments.
#[derive(Debug, Parser)]
#[command(name = "fraudctl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment in the config and write reports.
    Simulate { config: PathBuf },
    /// Run the optimality and fixed-point property suites.
    OracleCheck { config: PathBuf },
    /// Choose λ by cross-validation on the warm-up periods.
    TuneLambda { config: PathBuf },
    /// Re-aggregate the files of an earlier `simulate` run.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config } => commands::simulate(config),
        Command::OracleCheck { config } => commands::oracle_check(config),
        Command::TuneLambda { config } => commands::tune(config),
        Command::Report { dir } => commands::report(dir),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("fraudctl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
