use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ratectl_cli::commands::{self, SimOverrides, Status, SweepSpec};
use ratectl_cli::config::Loaded;

/// Optimal service-rate control for a single-server queue with abandonment.
///
/// Exit codes: 0 verified, 1 usage or configuration error, 2 a theorem check
/// or the simulation z-test failed.
#[derive(Parser)]
#[command(name = "ratectl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problem; writes policy.csv and report.toml.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Evaluate a policy table and run the structural checks on it.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a policy table; writes estimate.toml.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// One solve per value of a parameter; writes sweep.csv and sweep.toml.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `name=v1,v2,...` with name in r, h, c, theta, lambda, alpha, N.
        #[arg(long)]
        sweep: SweepSpec,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    match cli.command {
        Command::Solve { config, out } => commands::solve(&Loaded::read(&config)?, &out),
        Command::Check {
            config,
            policy,
            out,
        } => commands::check(&Loaded::read(&config)?, &policy, out.as_deref()),
        Command::Simulate {
            config,
            policy,
            horizon,
            reps,
            seed,
            out,
        } => commands::simulate_policy(
            &Loaded::read(&config)?,
            &policy,
            &SimOverrides {
                horizon,
                reps,
                seed,
            },
            &out,
        ),
        Command::Sweep { config, sweep, out } => {
            commands::sweep(&Loaded::read(&config)?, &sweep, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Status::Verified) => ExitCode::SUCCESS,
        Ok(Status::Unverified) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
