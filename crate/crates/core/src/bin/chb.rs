use std::path::PathBuf;
use std::process::ExitCode;

use chb_control::harness::{run_experiment, Command, Config};
use clap::{Parser, Subcommand};

/// Null controls for the linearized Cahn-Hilliard-Burgers system.
#[derive(Debug, Parser)]
#[command(name = "chb", version)]
struct Cli {
    /// TOML configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for CSV files and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Seed for all Monte-Carlo sampling (overrides run.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override a configuration entry, e.g. `--override grid.n=128`.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Sub {
    /// Steady Burgers profile and coupling constants.
    Steady,
    /// Uncontrolled forward simulation.
    Simulate,
    /// Penalized HUM null control.
    Control,
    /// Piecewise control for sources decaying like rho_F.
    SourceTerm,
    /// Fixed-point controller for the nonlinear system.
    Nonlinear,
    /// Carleman weight construction and joint-estimate probe.
    Carleman,
    /// Control cost over horizons and penalties.
    Sweep,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Steady => Command::Steady,
            Sub::Simulate => Command::Simulate,
            Sub::Control => Command::Control,
            Sub::SourceTerm => Command::SourceTerm,
            Sub::Nonlinear => Command::Nonlinear,
            Sub::Carleman => Command::Carleman,
            Sub::Sweep => Command::Sweep,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    let result = Config::load(cli.config.as_deref(), &overrides)
        .and_then(|cfg| run_experiment(cli.command.into(), &cfg, &cli.out));
    match result {
        Ok(sum) => {
            for (k, v) in &sum.results {
                println!("{k} = {v}");
            }
            println!("wrote {} files to {}", sum.outputs.len() + 1, cli.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
