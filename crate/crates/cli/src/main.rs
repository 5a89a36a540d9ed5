mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{EventLog, Session, SweepParam};
use config::{ConfigError, Overrides, RunConfig};
use report::Report;

/// Galerkin BEM assembly, compression and solves on sphere meshes.
#[derive(Parser, Debug)]
#[command(name = "h2bem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
    /// Also write the result table as CSV
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Write one line per scheduled work list
    #[arg(long, global = true)]
    log_events: Option<PathBuf>,
    /// Seed for the random probes of `verify`
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assemble the compressed operators and report timings and storage
    Assemble,
    /// Solve the configured boundary value problem and report errors
    Solve,
    /// Run the self-checks against dense oracles on a small mesh
    Verify,
    /// Repeat the assembly for several values of one parameter
    Sweep {
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values; orders are written `disjoint/singular`
        #[arg(long)]
        values: String,
    },
}

fn emit(report: &Report, csv: Option<&PathBuf>) -> Result<()> {
    report.print(std::io::stdout().lock())?;
    if let Some(p) = csv {
        report.write_csv(p)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = RunConfig::resolve(&cli.overrides)?;
    let events = cli.log_events.as_deref().map(EventLog::create).transpose()?;
    let mut s = Session {
        cfg,
        seed: cli.seed,
        events,
    };
    let csv = cli.csv.as_ref();
    match cli.command {
        Command::Assemble => emit(&commands::assemble(&mut s)?, csv)?,
        Command::Solve => emit(&commands::solve(&mut s)?, csv)?,
        Command::Verify => {
            let (report, pass) = commands::verify(&mut s)?;
            emit(&report, csv)?;
            return Ok(pass);
        }
        Command::Sweep { param, values } => emit(&commands::sweep(&mut s, param, &values)?, csv)?,
    }
    Ok(true)
}

fn is_usage_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<ConfigError>()
            || matches!(
                c.downcast_ref::<h2bem::Error>(),
                Some(h2bem::Error::Configuration(_) | h2bem::Error::InvalidArgument(_))
            )
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage_error(&e) { 2 } else { 1 })
        }
    }
}
