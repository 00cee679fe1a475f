//! Command-line front end for `rbayes`: synthetic data generation, full and
//! recursive fits, run comparison and timing ladders.

pub mod bench;
pub mod commands;
pub mod compare;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "rbayes",
    version,
    about = "Recursive Bayesian MCMC fits and comparisons"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by the config-driven subcommands.
#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// TOML run configuration; all fields are optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `stage.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `stage.workers`.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset and its generating values.
    Generate(RunArgs),
    /// Run a full or recursive fit and write samples, summaries and timings.
    Fit(RunArgs),
    /// Compare the final posteriors of two fit output directories.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        /// Directory for the report; defaults to the second run's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time full against recursive fits over a size ladder.
    Bench(RunArgs),
}

impl RunArgs {
    /// Loads the config (or defaults) and applies the command-line overrides.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.stage.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.stage.workers = w;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.resolve()?;
            commands::generate(&cfg, &cfg.output_dir)
        }
        Command::Fit(args) => {
            let cfg = args.resolve()?;
            commands::fit(&cfg, &cfg.output_dir)
        }
        Command::Compare { run_a, run_b, out } => {
            let out = out.unwrap_or_else(|| run_b.clone());
            let passes = compare::compare_runs(&run_a, &run_b, &out)?;
            println!("{}", if passes { "match" } else { "mismatch" });
            Ok(())
        }
        Command::Bench(args) => {
            let cfg = args.resolve()?;
            for r in bench::bench(&cfg, &cfg.output_dir)? {
                println!(
                    "{:>6} full {:>10.1} ms  recursive {:>10.1} ms  ratio {:.3}",
                    r.size, r.full_ms, r.recursive_ms, r.ratio
                );
            }
            Ok(())
        }
    }
}
