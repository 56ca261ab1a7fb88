//! Command-line front end: argument parsing, scenario files and output
//! formatting. `run_cli` is the whole program minus process setup, so tests
//! can drive it in-process.

pub mod commands;
pub mod scenario;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use mida_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(message: String) -> Self {
        CliError { code: EXIT_VALIDATION, message }
    }

    pub fn usage(message: String) -> Self {
        CliError { code: EXIT_USAGE, message }
    }

    pub fn io(e: csv::Error) -> Self {
        CliError { code: EXIT_VALIDATION, message: format!("write failed: {e}") }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvariantViolation(_) | Error::Unbalanced { .. } | Error::NoEquilibriumFound(_) => EXIT_INVARIANT,
            _ => EXIT_VALIDATION,
        };
        CliError { code, message: e.to_string() }
    }
}

pub(crate) fn csv_writer(path: &std::path::Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(CliError::io)
}

#[derive(Debug, Parser)]
#[command(name = "mida", version, about = "Multi-item double auction: equilibria, mechanism runs and experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a scenario: gross substitutes, DMR and demand flow per agent.
    Check { scenario: PathBuf },
    /// Compute the Walrasian equilibrium of the scenario's market.
    Solve {
        scenario: PathBuf,
        /// Also write per-type prices and volumes as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Seed for generated markets.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        allow_non_gs: bool,
    },
    /// Run the mechanism once.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print trader sets, clearing checks and the loss account.
        #[arg(long, alias = "emit-diagnostics")]
        diagnostics: bool,
        #[arg(long)]
        allow_non_gs: bool,
    },
    /// Estimate the competitive ratio over many seeded trials.
    Experiment {
        scenario: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-trial CSV destination; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-derive one of the worked examples and check its claims.
    Reproduce {
        /// mcafee-sbb, naive-multiunit or demand-supply-interaction.
        id: String,
        #[arg(long)]
        k: Option<usize>,
        /// Rational epsilon such as 1/1000.
        #[arg(long)]
        eps: Option<String>,
        /// Number of big-buyer units for demand-supply-interaction.
        #[arg(long = "big-k")]
        big_k: Option<usize>,
        /// Also average the ratio over this many random halvings.
        #[arg(long, default_value_t = 0)]
        random_seeds: usize,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Results go to `out`; wall-clock timings and errors go to `err`.
pub fn run_cli<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let started = Instant::now();
    let result = dispatch(cli.command, out);
    let elapsed = started.elapsed();
    match result {
        Ok(()) => {
            let _ = writeln!(err, "wall time: {:.3}s", elapsed.as_secs_f64());
            EXIT_OK
        }
        Err(e) => {
            let _ = write!(err, "{}", e.message);
            if !e.message.ends_with('\n') {
                let _ = writeln!(err);
            }
            e.code
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::validation(format!("write failed: {e}")))
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Check { scenario } => emit(out, &commands::check(&scenario)?),
        Command::Solve { scenario, csv, seed, allow_non_gs } => {
            emit(out, &commands::solve(&scenario, csv.as_deref(), seed, allow_non_gs)?)
        }
        Command::Run { scenario, seed, diagnostics, allow_non_gs } => {
            emit(out, &commands::run(&scenario, seed, diagnostics, allow_non_gs)?)
        }
        Command::Experiment { scenario, trials, seed, out: path } => {
            let (csv, summary) = commands::experiment(&scenario, trials, seed)?;
            match path {
                Some(p) => {
                    std::fs::write(&p, csv)
                        .map_err(|e| CliError::validation(format!("cannot write {}: {e}", p.display())))?;
                    emit(out, &summary)
                }
                None => emit(out, &csv),
            }
        }
        Command::Reproduce { id, k, eps, big_k, random_seeds } => {
            let args = commands::ReproduceArgs { k, eps, big_k, random_seeds };
            emit(out, &commands::reproduce_cmd(&id, &args)?)
        }
    }
}
