use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use rsos_cli::report::{emit, ReportFormat};
use rsos_cli::runner::{run_cells, Backend};
use rsos_cli::scenario::{Family, ScenarioSpec};

/// Range reconciliation benchmark harness.
#[derive(Parser)]
#[command(name = "bench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario cell on one backend.
    Run(RunArgs),
    /// Sweep every family and backend up to an instance index.
    All(AllArgs),
    /// Check the integrity of a paged store file.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario family: base_dense, base_sparse, scale_dense, scale_sparse,
    /// stress, or stress_dyn.
    #[arg(long)]
    family: Family,
    /// Instance index, 1..=8.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=8))]
    i: u32,
    /// Backend: ref, btree, paged, btree+window, or paged+window.
    #[arg(long)]
    backend: Backend,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Reconciliations per cell, averaged into the reported timing.
    #[arg(long, default_value_t = 10)]
    repeats: u32,
    /// Report format: csv or json.
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AllArgs {
    /// Highest instance index to run for every family.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..=8))]
    max_i: u32,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    repeats: u32,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run independent cells on worker threads.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Paged store file to check.
    #[arg(long)]
    file: PathBuf,
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(args) => {
            let spec = ScenarioSpec::new(args.family, args.i, args.seed);
            let workdir = tempfile::tempdir().context("creating scratch directory")?;
            let metrics = run_cells(&[(args.backend, spec)], args.repeats, workdir.path(), false)?;
            emit(&metrics, args.format, args.out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::All(args) => {
            let mut cells = Vec::new();
            for family in Family::ALL {
                for i in 1..=args.max_i {
                    for backend in Backend::ALL {
                        cells.push((backend, ScenarioSpec::new(family, i, args.seed)));
                    }
                }
            }
            let workdir = tempfile::tempdir().context("creating scratch directory")?;
            let metrics = run_cells(&cells, args.repeats, workdir.path(), args.parallel)?;
            emit(&metrics, args.format, args.out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify(args) => {
            let report = rsos_core::paged::verify_file(&args.file)
                .with_context(|| format!("verifying {}", args.file.display()))?;
            println!(
                "txn {} root {} entries {} pages_walked {}",
                report.txn_id,
                report
                    .root_page
                    .map_or("none".to_string(), |p| p.to_string()),
                report.total_entries,
                report.pages_walked
            );
            if report.is_clean() {
                println!("clean");
                Ok(ExitCode::SUCCESS)
            } else {
                for v in &report.violations {
                    println!("violation: {v}");
                }
                Ok(ExitCode::FAILURE)
            }
        }
    }
}
