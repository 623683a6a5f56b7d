//! `sde-enet`: simulate, fit and evaluate sparse diffusion models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::EstimationFailure;

#[derive(Debug, Parser)]
#[command(name = "sde-enet", version, about = "Adaptive Elastic-Net estimation for diffusion processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output file, or directory for `mc`. Files default to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an Euler–Maruyama path to CSV.
    Simulate(Common),
    /// QMLE, λ path and λ selection; writes a JSON report.
    Fit(Common),
    /// Like `fit` but writes the whole λ path as CSV.
    Path(Common),
    /// One-step forecasts from a fit report.
    Predict(Common),
    /// Monte-Carlo study.
    Mc(Common),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<EstimationFailure>().is_some() {
        return 1;
    }
    match err.downcast_ref::<sde_enet::Error>() {
        Some(
            sde_enet::Error::Estimation { .. }
            | sde_enet::Error::Solver { .. }
            | sde_enet::Error::Simulation { .. }
            | sde_enet::Error::Model(_),
        ) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (Command::Simulate(c) | Command::Fit(c) | Command::Path(c) | Command::Predict(c) | Command::Mc(c)) = &cli.command;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = c.workers {
        if k == 0 {
            return Err(sde_enet::Error::Config("--workers must be at least 1".into()).into());
        }
        pool = pool.num_threads(k);
    }
    let pool = pool.build()?;
    let out = c.out.as_deref();
    pool.install(|| match &cli.command {
        Command::Simulate(c) => commands::simulate(&c.config, out, c.seed),
        Command::Fit(c) => commands::fit(&c.config, out),
        Command::Path(c) => commands::path(&c.config, out),
        Command::Predict(c) => commands::predict(&c.config, out),
        Command::Mc(c) => commands::mc(&c.config, out, c.seed),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
