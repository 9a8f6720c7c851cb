//! `stefan`: batch drivers for the two-phase Stefan simulator and its linear stability analysis.

mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::error::CliError;
use crate::output::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "stefan", version, about = "Two-phase Stefan problem near a steady circle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Threshold, growth rate by shooting and by the Rayleigh quotient, mode profile.
    Eigen { config: PathBuf },
    /// Roots of the dispersion functions for k = 0..=kmax.
    DispersionScan {
        config: PathBuf,
        #[arg(long, default_value_t = 8)]
        kmax: usize,
    },
    /// Time evolution from generic data: trajectory CSV and summary.
    Simulate {
        config: PathBuf,
        /// Record every this many steps (default: at most about 1000 rows).
        #[arg(long)]
        every: Option<usize>,
    },
    /// Conservation audit of a run.
    Conserved {
        config: PathBuf,
        #[arg(long)]
        every: Option<usize>,
    },
    /// Limit circle predicted from the initial invariants.
    LimitCircle { config: PathBuf },
    /// Property suite over all modules.
    Verify {
        /// Reduced resolutions (same as STEFAN_VERIFY_QUICK=1).
        #[arg(long)]
        quick: bool,
        /// Output directory for verify.json.
        #[arg(long, default_value = "stefan-out")]
        outdir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let start = Instant::now();
    let (name, cfg, result) = match cli.command {
        Command::Verify { quick, outdir } => {
            std::fs::create_dir_all(&outdir)?;
            let r = commands::cmd_verify(quick, &outdir);
            return finish("verify", None, &outdir, start, r);
        }
        Command::Eigen { config } => {
            let cfg = commands::load_config(&config)?;
            let dir = output::out_dir(Some(&cfg))?;
            let r = commands::cmd_eigen(&cfg, &dir);
            ("eigen", cfg, (dir, r))
        }
        Command::DispersionScan { config, kmax } => {
            let cfg = commands::load_config(&config)?;
            let dir = output::out_dir(Some(&cfg))?;
            let r = commands::cmd_dispersion_scan(&cfg, kmax, &dir);
            ("dispersion-scan", cfg, (dir, r))
        }
        Command::Simulate { config, every } => {
            let cfg = commands::load_config(&config)?;
            let dir = output::out_dir(Some(&cfg))?;
            let r = commands::cmd_simulate(&cfg, every, &dir);
            ("simulate", cfg, (dir, r))
        }
        Command::Conserved { config, every } => {
            let cfg = commands::load_config(&config)?;
            let dir = output::out_dir(Some(&cfg))?;
            let r = commands::cmd_conserved(&cfg, every, &dir);
            ("conserved", cfg, (dir, r))
        }
        Command::LimitCircle { config } => {
            let cfg = commands::load_config(&config)?;
            let dir = output::out_dir(Some(&cfg))?;
            let r = commands::cmd_limit_circle(&cfg, &dir);
            ("limit-circle", cfg, (dir, r))
        }
    };
    let (dir, r) = result;
    finish(name, Some(cfg), &dir, start, r)
}

fn finish(
    name: &str,
    cfg: Option<stefan_core::stefan::SimConfig>,
    dir: &std::path::Path,
    start: Instant,
    result: Result<commands::Outcome, CliError>,
) -> Result<(), CliError> {
    let (checks, failures) = match &result {
        Ok(o) => (o.checks.clone(), o.failures),
        Err(_) => (Vec::new(), 0),
    };
    let manifest = RunManifest {
        command: name.into(),
        config: cfg,
        version: env!("CARGO_PKG_VERSION").into(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        checks,
    };
    output::write_json(&dir.join(format!("manifest_{name}.json")), &manifest)?;
    result?;
    if failures > 0 {
        return Err(CliError::Invariant(failures));
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
