//! Command line front end: scenario runs, parameter tables and the check
//! registry.

pub mod checks;
pub mod output;
pub mod pipeline;
pub mod scenario;
pub mod table;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use crate::pipeline::RunError;
use crate::scenario::Scenario;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAIL: i32 = 1;
pub const EXIT_SOLVER_FAIL: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "BRIDGECERT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "bridgecert", version, about = "Solve and certify one-dimensional Schrödinger bridges")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a scenario, run its checks and write out/<name>/.
    Run {
        scenario: PathBuf,
        /// Output root.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overwrite an existing output directory.
        #[arg(long)]
        force: bool,
    },
    /// Print alpha_psi, its bracket and the LSI constant over a lattice as CSV.
    Table { lattice: PathBuf },
    /// List the checks a run performs.
    ListChecks,
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize =
        raw.trim().parse().with_context(|| format!("{THREADS_ENV} must be a positive integer, got '{raw}'"))?;
    if n == 0 {
        bail!("{THREADS_ENV} must be a positive integer, got 0");
    }
    // a pool already built in this process keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs the command line and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return EXIT_USAGE;
    }
    match cli.command {
        Command::Run { scenario, out, force } => cmd_run(&scenario, &out, force),
        Command::Table { lattice } => cmd_table(&lattice),
        Command::ListChecks => {
            for c in checks::CHECKS {
                println!("{:<22} {}", c.id, c.summary);
            }
            EXIT_PASS
        }
    }
}

fn cmd_run(path: &std::path::Path, out: &std::path::Path, force: bool) -> i32 {
    let loaded = match Scenario::load(path) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_USAGE;
        }
    };
    let dir = output::run_dir(out, &loaded.scenario.name);
    if dir.exists() && !force {
        eprintln!("error: {} already exists; pass --force to overwrite", dir.display());
        return EXIT_USAGE;
    }
    let run = match pipeline::run(&loaded) {
        Ok(r) => r,
        Err(e @ RunError::Usage(_)) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
        Err(e @ RunError::Solver(_)) => {
            eprintln!("error: {e}");
            return EXIT_SOLVER_FAIL;
        }
    };
    for c in &run.report.checks {
        let status = match c.status {
            checks::Status::Pass => "PASS",
            checks::Status::Fail => "FAIL",
            checks::Status::Skipped => "SKIP",
        };
        println!("{status} {}", c.id);
    }
    match output::write_run(&dir, &run) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_USAGE;
        }
    }
    if run.report.passed {
        EXIT_PASS
    } else {
        EXIT_CHECK_FAIL
    }
}

fn cmd_table(path: &std::path::Path) -> i32 {
    let lattice = match table::Lattice::load(path) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_USAGE;
        }
    };
    match table::write_table(&lattice, std::io::stdout().lock()) {
        Ok(0) => EXIT_PASS,
        Ok(n) => {
            eprintln!("error: {n} lattice points failed to solve");
            EXIT_SOLVER_FAIL
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    }
}
