//! `plate-dg`: runs experiments, convergence studies and the invariant suite.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use platedg::io::{convergence_csv, run_convergence, run_experiment, LevelResult, RunConfig, TABLE_HEADER};

#[derive(Parser)]
#[command(name = "plate-dg", version, about = "DG gradient flow for isometric plate bending")]
struct Cli {
    /// Worker threads for assembly (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for the randomized inputs of `verify`.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run { config: PathBuf },
    /// Run a sequence of uniform refinements and write convergence.csv.
    Convergence {
        config: PathBuf,
        #[arg(long, default_value_t = 2)]
        levels: u32,
    },
    /// Run the invariant checks on built-in tiny meshes.
    Verify,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}

/// Returns `Ok(false)` when the command ran but its result is a failure.
fn execute(cli: &Cli) -> platedg::Result<bool> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = RunConfig::from_path(config)?;
            let outcome = run_experiment(&cfg)?;
            println!("{TABLE_HEADER}");
            println!("{}", outcome.table_row().csv());
            if let Some(msg) = &outcome.trace.failure {
                error!("flow failed: {msg}");
                return Ok(false);
            }
            Ok(true)
        }
        Command::Convergence { config, levels } => {
            let cfg = RunConfig::from_path(config)?;
            let rows = run_convergence(&cfg, *levels)?;
            print!("{}", convergence_csv(&rows));
            Ok(rows.iter().all(|r| matches!(r, LevelResult::Ok(_))))
        }
        Command::Verify => {
            let checks = platedg::verify::run_all(cli.seed)?;
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {failed} failed", checks.len());
            Ok(failed == 0)
        }
    }
}
