use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use favar_cli::commands::{self, exit_code};
use favar_cli::config::{parse_grid, Overrides, RunConfig};
use favar::{FavarError, Result};

#[derive(Parser)]
#[command(name = "favar", version, about = "Bayesian FAVAR estimation and impulse responses")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for chains and sweep cells (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, transform, screen and standardize the raw panel.
    Prepare,
    /// Run the Gibbs sampler and store the posterior chains.
    Estimate,
    /// Impulse responses to the policy shock with posterior bands.
    Irf,
    /// Write a synthetic panel, its metadata and the true parameters.
    Simulate,
    /// Re-estimate over a grid of factor counts and lag orders.
    Sweep {
        /// Grids such as `K=1..5 d=2,4`; missing axes use the config.
        #[arg(long = "sweep", num_args = 1..)]
        sweep: Vec<String>,
        #[arg(hide = true)]
        grids: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides { seed: cli.seed, output: cli.out.clone(), workers: cli.workers });
    cfg.validate()?;
    commands::output_dir_writable(&cfg.output)?;
    match cli.command {
        Command::Prepare => {
            let (panel, report) = commands::cmd_prepare(&cfg)?;
            eprintln!(
                "prepared {} series over {} quarters ({} to {})",
                panel.n_series(),
                report.periods,
                report.first_date,
                report.last_date
            );
        }
        Command::Estimate => {
            let s = commands::cmd_estimate(&cfg)?;
            eprintln!("stored {} chain(s) under {}", s.chains.len(), cfg.chains_dir().display());
        }
        Command::Irf => {
            let b = commands::cmd_irf(&cfg)?;
            eprintln!("wrote responses of {} variables", b.variables.len());
        }
        Command::Simulate => {
            let d = commands::cmd_simulate(&cfg)?;
            eprintln!("simulated {} series over {} quarters", d.raw.len(), d.panel.periods());
        }
        Command::Sweep { sweep, grids } => {
            let (mut factors, mut lags) = (cfg.sweep_factors.clone(), cfg.sweep_lags.clone());
            for g in sweep.iter().chain(&grids) {
                let (key, vals) = parse_grid(g)?;
                match key.as_str() {
                    "K" | "k" | "factors" => factors = vals,
                    "d" | "lags" => lags = vals,
                    other => {
                        return Err(FavarError::InvalidSpec(format!("unknown sweep axis '{other}' (K or d)")))
                    }
                }
            }
            let mut probe = cfg.clone();
            probe.sweep_factors = factors.clone();
            probe.sweep_lags = lags.clone();
            probe.validate()?;
            let cells = commands::cmd_sweep(&probe, &factors, &lags)?;
            let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
            eprintln!("sweep: {} cells, {failed} failed", cells.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
