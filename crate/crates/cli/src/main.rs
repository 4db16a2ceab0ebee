//! `vm`: command-line front end for the portfolio library.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use crate::commands::{apply_overrides, dispatch, Command, Overrides, Run};
use crate::config::{default_config, load_config, KindConfig};
use crate::output::Writer;

#[derive(Debug, Parser)]
#[command(name = "vm", version, about = "Optimal portfolios under fake-stationary Volterra volatility")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration; the built-in two-asset example when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides outputs.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Single risk-aversion level replacing utility.gamma.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
    /// Riccati steps for `riccati` and `value`, simulation steps otherwise.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    utility: Option<UtilityArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum UtilityArg {
    Power,
    Exponential,
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("VM_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("VM_THREADS: not a count: {v:?}"))?;
        if n == 0 {
            anyhow::bail!("VM_THREADS: must be >= 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    init_threads()?;
    let cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => default_config(),
    };
    let overrides = Overrides {
        out: cli.out,
        seed: cli.seed,
        gamma: cli.gamma,
        paths: cli.paths,
        steps: cli.steps,
        utility: cli.utility.map(|u| match u {
            UtilityArg::Power => KindConfig::Power,
            UtilityArg::Exponential => KindConfig::Exponential,
        }),
    };
    let cfg = apply_overrides(cfg, cli.command, &overrides)?;
    let run = Run::new(cfg)?;
    let mut w = Writer::new(&run.cfg.outputs.dir, run.meta(cli.command))?;
    let checks = dispatch(cli.command, &run, &mut w)?;
    for c in &checks {
        eprintln!("{} {}", if c.pass { "ok  " } else { "FAIL" }, c.name);
    }
    for p in w.written() {
        eprintln!("wrote {}", p.display());
    }
    Ok(checks.iter().all(|c| c.pass))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
