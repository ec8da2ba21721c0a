use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aqr_core::AqrError;
use clap::{Parser, Subcommand};
use thiserror::Error;

mod commands;
mod io;

#[derive(Parser, Debug)]
#[command(name = "aqr", version, about = "Average quantile regression toolkit")]
struct Cli {
    /// JSON configuration for the subcommand; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding any seed in the configuration.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Existing directory for result files.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the weight-family conditions; exits 1 if any family fails.
    Validate,
    /// Population AQR across distributions, families and levels, with ordering checks.
    Compare,
    /// Nonparametric conditional AQR simulation (sine model).
    Sim1,
    /// Full-data versus distributed single-index simulation.
    Sim2,
    /// AQR-minimizing portfolio weights and out-of-sample evaluation.
    Portfolio {
        /// Returns used for fitting: header of asset labels, one row per day.
        #[arg(long)]
        fit: PathBuf,
        /// Returns used for evaluation, same columns as the fit file.
        #[arg(long)]
        test: PathBuf,
        /// Single-column benchmark returns aligned with the test file.
        #[arg(long)]
        bench: PathBuf,
    },
    /// Average conditional AQR of air-quality data with site shards.
    Airquality {
        #[arg(long)]
        data: PathBuf,
    },
    /// Full-data single-index fit.
    Fit {
        #[arg(long)]
        data: PathBuf,
    },
    /// Distributed single-index fit.
    DistFit {
        #[arg(long)]
        data: PathBuf,
    },
    /// Sample or population AQR values.
    Risk {
        /// CSV with the sample column; omit to use only a configured distribution.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: line {line}{}: {message}", path.display(), if column.is_empty() { String::new() } else { format!(", column {column:?}") })]
    Parse { path: PathBuf, line: usize, column: String, message: String },
    #[error("{}: invalid configuration: {source}", path.display())]
    Config { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] AqrError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn csv(path: &Path, err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(source) => CliError::Io { path: path.to_path_buf(), source },
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => CliError::Parse {
                path: path.to_path_buf(),
                line,
                column: String::new(),
                message: format!("expected {expected_len} fields, found {len}"),
            },
            kind => CliError::Parse { path: path.to_path_buf(), line, column: String::new(), message: format!("{kind:?}") },
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(_) => 1,
            _ => 2,
        }
    }
}

/// Shared flags handed to every command.
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let g = Globals { config: cli.config, seed: cli.seed, out: cli.out };
    let result = match &cli.command {
        Command::Validate => commands::validate(&g),
        Command::Compare => commands::compare(&g),
        Command::Sim1 => commands::sim1(&g),
        Command::Sim2 => commands::sim2(&g),
        Command::Portfolio { fit, test, bench } => commands::portfolio(&g, fit, test, bench),
        Command::Airquality { data } => commands::airquality(&g, data),
        Command::Fit { data } => commands::fit(&g, data),
        Command::DistFit { data } => commands::dist_fit(&g, data),
        Command::Risk { data } => commands::risk(&g, data.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
