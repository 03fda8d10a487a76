use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use swingstop::cli::{self, CliError, Command, Report};

/// Swing-option pricing under g-expectations.
#[derive(Debug, Parser)]
#[command(name = "swingstop", version)]
struct Args {
    #[command(subcommand)]
    command: Cmd,
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output CSV; overrides the `output` key. Defaults to stdout.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Values at time 0 for every number of rights.
    Price,
    /// Lowest stopping state per right and step.
    Boundary,
    /// Values on dyadic refinements of the lattice.
    Converge,
    /// Engine values next to every applicable oracle.
    Oracle,
    /// Invariant suite; without --config runs the bundled instances.
    Verify,
    /// Obstacle-problem values against the lattice.
    PdeCompare {
        /// Also write the PDE value grids as `i,t,x,v`.
        #[arg(long, value_name = "FILE")]
        values: Option<PathBuf>,
    },
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn run(args: Args) -> Result<Report, CliError> {
    let exec = cli::execution_from_env()?;
    let cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            let base = path.parent().unwrap_or(Path::new("."));
            let cfg = cli::parse_config_in(&text, base)?;
            for (key, value) in &cfg.defaults {
                log::info!("default {key} = {value}");
            }
            Some(cfg)
        }
        None => None,
    };
    let (command, values_path) = match args.command {
        Cmd::Price => (Command::Price, None),
        Cmd::Boundary => (Command::Boundary, None),
        Cmd::Converge => (Command::Converge, None),
        Cmd::Oracle => (Command::Oracle, None),
        Cmd::Verify => (Command::Verify, None),
        Cmd::PdeCompare { values } => (Command::PdeCompare, values),
    };
    let report = cli::run_command(command, cfg.as_ref(), exec)?;
    match args.out.or_else(|| cfg.as_ref().and_then(|c| c.output.clone())) {
        Some(path) => write_file(&path, &report.csv)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(report.csv.as_bytes())
                .map_err(|source| CliError::Io { path: PathBuf::from("<stdout>"), source })?;
        }
    }
    if let (Some(path), Some(values)) = (values_path, &report.values_csv) {
        write_file(&path, values)?;
    }
    Ok(report)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let code = match run(Args::parse()) {
        Ok(report) => {
            for f in &report.failures {
                eprintln!("FAIL\t{f}");
            }
            report.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
