//! `prwlab` - configuration-driven experiment runner.
//!
//! One JSON experiment file drives every subcommand; artifacts land in the
//! configured output directory together with a manifest. Failures exit
//! nonzero with a machine-readable JSON error on stderr.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use crate::runner::Subcommand as Action;

#[derive(Parser)]
#[command(name = "prwlab", version, about = "Renewal-theory lab for iterated perturbed random walks")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Also dump one grid function as CSV (U, V, V_<j>, F or G).
    #[arg(long, global = true)]
    dump: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate U, V and the generation means; writes tables.csv and scalars.json.
    Tables,
    /// Run the tree ensemble; writes sim.csv and heights.csv.
    Simulate,
    /// Solve for the growth rate; prints and writes gamma.json.
    Gamma,
    /// Score table values against asymptotic predictors; writes ratios.csv.
    Verify,
    /// Emit CLT-normalised statistics, one per replica; writes clt.csv.
    Clt,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = serde_json::json!({ "error": format!("{e:#}") });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("PRWLAB_THREADS") {
        let n: usize = threads
            .parse()
            .map_err(|_| anyhow!("PRWLAB_THREADS: expected a thread count, got `{threads}`"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("PRWLAB_THREADS: cannot configure the thread pool")?;
    }
    let path = cli.config.ok_or_else(|| anyhow!("--config <path> is required"))?;
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let mut config = config::parse_config(&text)?;
    if let Some(out) = cli.out {
        config.output_dir = out.display().to_string();
    }
    if let Some(seed) = cli.seed {
        config.simulate.master_seed = seed;
    }
    let action = match cli.command {
        Command::Tables => Action::Tables,
        Command::Simulate => Action::Simulate,
        Command::Gamma => Action::Gamma,
        Command::Verify => Action::Verify,
        Command::Clt => Action::Clt,
    };
    let files = runner::run(&config, action, cli.dump.as_deref())?;
    for f in files {
        log::info!("wrote {}", f.display());
    }
    Ok(())
}
