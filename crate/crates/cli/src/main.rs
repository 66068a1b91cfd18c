use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

use commands::CliError;

/// Off-policy TD experiments, risk-sensitive bound reports and
/// sample-complexity sweeps.
#[derive(Debug, Parser)]
#[command(name = "markov-sa", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a multi-replication experiment and write per-step statistics as CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_path`; stdout when neither is set.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<u32>,
    },
    /// Evaluate every error bound for a risk model or a matrix pair.
    ///
    /// The JSON report goes to `--out` (or stdout); with `--out` a one-row
    /// CSV summary is written next to it with the extension `csv`.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the sample-complexity estimates over a grid of step exponents.
    Complexity {
        #[arg(long)]
        config: PathBuf,
        /// Grid `A:B:N` of exponents `k`.
        #[arg(long, default_value = "0.6:0.95:50")]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve for the TD fixed point of a built-in environment, or the
    /// risk-sensitive cost of a model given with `--config`.
    Solve {
        #[arg(long, value_enum, required_unless_present = "config")]
        env: Option<SolveEnv>,
        #[arg(long, conflicts_with = "env")]
        config: Option<PathBuf>,
        /// Seed of the random environment.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolveEnv {
    Baird,
    Theta2theta,
    Random,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MARKOV_SA_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed, replications } => {
            commands::run(&config, out.as_deref(), seed, replications)
        }
        Command::Bounds { config, out } => commands::bounds(&config, out.as_deref()),
        Command::Complexity { config, grid, out } => commands::complexity(&config, &grid, out.as_deref()),
        Command::Solve { env, config, seed, out } => match (env, config) {
            (_, Some(path)) => commands::solve_risk(&path, out.as_deref()),
            (Some(env), None) => commands::solve_env(env, seed, out.as_deref()),
            (None, None) => Err(CliError::Usage("solve needs --env or --config".into())),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
