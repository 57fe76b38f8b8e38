//! `credit-spde`: calibration, tranche pricing and convergence studies for the
//! large-portfolio credit model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Run;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "credit-spde", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded, fixed-order reductions.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Fit sigma to index spreads and back out per-name distances to default.
    Calibrate,
    /// Tranche spreads over the configured correlation grid.
    PriceTranches,
    /// Resetting and non-resetting forward tranche spreads.
    PriceForward,
    /// Monte-Carlo, time-step and grid convergence tables.
    ConvergenceStudy,
    /// Finite baskets and the filtering recursion against the SPDE.
    SimulateBasket,
}

fn run(cli: &Cli) -> credit_spde::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.deterministic |= cli.deterministic;
    let run = Run::new(cfg, cli.out.clone())?;
    match cli.command {
        Command::Calibrate => commands::calibrate(&run),
        Command::PriceTranches => commands::price_tranches(&run),
        Command::PriceForward => commands::price_forward(&run),
        Command::ConvergenceStudy => commands::convergence_study(&run),
        Command::SimulateBasket => commands::simulate_basket(&run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
