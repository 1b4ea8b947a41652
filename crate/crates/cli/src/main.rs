use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sde_moments_cli::{
    run_baseline, run_compare, run_density, run_moments, CliError, RunConfig, RunOptions,
};

#[derive(Parser)]
#[command(
    name = "sde-moments",
    version,
    about = "Moment propagation and densities for Euler-Maruyama SDE solutions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Final-time moments, mean and covariance.
    Moments(Common),
    /// Gram-Charlier marginal densities for every component.
    Density(Common),
    /// Monte Carlo ensemble, empirical moments and KDE curves.
    Baseline(Common),
    /// Differences between the moment/density artifacts and the baseline.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Run moments, density and baseline first.
        #[arg(long)]
        produce: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write moments every K steps (fixed initial state only).
    #[arg(long, value_name = "K", value_parser = clap::value_parser!(u64).range(1..))]
    trajectory_stride: Option<u64>,
    /// Clamp negative density values to zero in exported CSVs.
    #[arg(long)]
    clip_nonnegative: bool,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, RunOptions), CliError> {
        let mut config = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        let options = RunOptions {
            trajectory_stride: self.trajectory_stride.map(|k| k as usize),
            clip_nonnegative: self.clip_nonnegative,
        };
        Ok((config, options))
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Moments(common) => {
            let (config, options) = common.load()?;
            let outcome = run_moments(&config, &options)?;
            println!("mean: {:?}", outcome.covariance.mean);
        }
        Command::Density(common) => {
            let (config, options) = common.load()?;
            let outcome = run_density(&config, &options)?;
            for c in &outcome.report.components {
                println!("component {}: {:?}", c.component, c.status);
            }
        }
        Command::Baseline(common) => {
            let (config, options) = common.load()?;
            let outcome = run_baseline(&config, &options)?;
            println!("mean: {:?}", outcome.summary.mean);
        }
        Command::Compare { common, produce } => {
            let (config, options) = common.load()?;
            let comparison = run_compare(&config, &options, produce)?;
            println!(
                "max relative mean difference: {:?}, covariance: {:?}, tvd: {:?}",
                comparison.max_relative_mean(),
                comparison.max_relative_covariance(),
                comparison.tvd
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({
                "error": e.to_string(),
                "exit_code": e.exit_code(),
            });
            eprintln!("{report}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
