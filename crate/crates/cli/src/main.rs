//! Batch front-end: parses a scenario configuration, runs the named
//! pipeline, writes field dumps and JSON reports.
//!
//! Exit codes: 0 all checks passed, 1 numerical failure, 2 usage or
//! configuration error.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ScenarioConfig;
use runner::{finalize, RunError};

#[derive(Parser)]
#[command(
    name = "fieldglue",
    about = "Compactly supported solutions of underdetermined elliptic systems and field gluing"
)]
struct Cli {
    /// Print the default configuration document and exit.
    #[arg(long, global = true)]
    print_defaults: bool,

    /// Path to the scenario configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides the config's output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for cell-parallel loops (0 = all cores). Affects
    /// speed only, never results.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Solve P U = f with compact support in the domain.
    Solve,
    /// Glue the inner and outer fields across the transition collar.
    Glue,
    /// Glue the inner field with zero (truncation).
    Truncate,
    /// Match the outer family's fluxes to the inner field, then glue.
    FluxMatch,
    /// Estimate the boundary-collar coercivity constant.
    ApiEstimate,
    /// Numerically count near-kernel directions of the adjoint.
    KernelDim,
    /// Run the built-in identity checks on the configured domain.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.print_defaults {
        let text = serde_json::to_string_pretty(&config::default_config())
            .expect("default config serializes");
        println!("{text}");
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required (or --print-defaults); see --help");
        return ExitCode::from(2);
    };
    let Some(config_path) = cli.config else {
        eprintln!("error: --config PATH is required; see --help");
        return ExitCode::from(2);
    };
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .expect("thread pool");
    }
    let text = match std::fs::read_to_string(&config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: reading {config_path:?}: {e}");
            return ExitCode::from(2);
        }
    };
    let parsed = match ScenarioConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let scenario = parsed.scenario.clone();
    let out_dir = cli
        .out
        .clone()
        .or_else(|| parsed.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let built = match parsed.build() {
        Ok(b) => b,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: creating {out_dir:?}: {e}");
        return ExitCode::from(2);
    }
    let outcome = match command {
        Command::Solve => runner::run_solve(&built, &out_dir),
        Command::Glue => runner::run_glue(&built, &out_dir),
        Command::Truncate => runner::run_truncate(&built, &out_dir),
        Command::FluxMatch => runner::run_flux_match(&built, &out_dir),
        Command::ApiEstimate => runner::run_api_estimate(&built, &out_dir),
        Command::KernelDim => runner::run_kernel_dim(&built, &out_dir),
        Command::Selftest => runner::run_selftest(&built, &out_dir),
    };
    if let Err(RunError::Config(ref e)) = outcome {
        eprintln!("{e}");
        return ExitCode::from(2);
    }
    ExitCode::from(finalize(&scenario, outcome, &out_dir) as u8)
}
