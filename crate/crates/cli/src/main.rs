//! `countvb`: simulate count data, fit Poisson and Negative Binomial
//! additive models by variational Bayes, stream observations into a fit,
//! and benchmark the fits against a reference sampler.

mod commands;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use countvb::benchmark::BenchmarkConfig;
use countvb::mcmc::ChainConfig;
use countvb::stream::DEFAULT_F_UPDATE;
use countvb::{Family, FitConfig};

use commands::{BenchmarkArgs, FitArgs, SimulateArgs, StreamArgs, EXIT_NOT_CONVERGED};

#[derive(Parser)]
#[command(
    name = "countvb",
    version,
    about = "Variational Bayes for count regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a simulated data set as CSV.
    Simulate {
        #[arg(long, default_value = "poisson", value_parser = parse_family)]
        family: Family,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Single-predictor data for the streaming demo instead of the
        /// two-predictor additive model.
        #[arg(long)]
        movie: bool,
        /// Output file; standard output if omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit a model to a CSV file; writes fit.json and curves.csv.
    Fit {
        #[arg(long)]
        input: PathBuf,
        /// JSON model description; default is response `y` with a smooth of
        /// every other column.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the family in the config.
        #[arg(long, value_parser = parse_family)]
        family: Option<Family>,
        #[arg(long, default_value_t = 17)]
        k: usize,
        #[command(flatten)]
        fit: FitFlags,
        /// Seed of the reference sampler run by --mcmc-samples.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
        /// Also run the reference sampler and write its draws to this CSV.
        #[arg(long)]
        mcmc_samples: Option<PathBuf>,
    },
    /// Warm up on the first records, then ingest the rest one at a time,
    /// writing JSON-lines snapshots.
    Stream {
        /// CSV input; simulated single-predictor data if omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Records to simulate when no input is given.
        #[arg(long, default_value_t = 5100)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 17)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        n_warm: usize,
        #[arg(long, default_value_t = DEFAULT_F_UPDATE)]
        f_update: usize,
        #[arg(long, default_value_t = 10)]
        snapshot_every: usize,
        #[command(flatten)]
        fit: FitFlags,
        /// Output file; standard output if omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare variational and sampler posteriors on simulated replicates.
    Benchmark {
        #[arg(long, default_value = "poisson", value_parser = parse_family)]
        family: Family,
        #[arg(long, default_value_t = 20)]
        replicates: usize,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 17)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        fit: FitFlags,
        #[arg(long, default_value_t = ChainConfig::default().burn_in)]
        burn_in: usize,
        #[arg(long, default_value_t = ChainConfig::default().kept)]
        kept: usize,
        #[arg(long, default_value_t = ChainConfig::default().thin)]
        thin: usize,
        /// Output directory for summary.csv, accuracy.csv and timing.csv;
        /// the summary goes to standard output if omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FitFlags {
    #[arg(long, default_value_t = FitConfig::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = FitConfig::default().max_iter)]
    max_iter: usize,
}

impl FitFlags {
    fn config(&self) -> FitConfig {
        FitConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            ..FitConfig::default()
        }
    }
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: countvb::Error| e.to_string())
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("COUNTVB_THREADS") {
        Ok(v) => {
            let t: usize = v
                .trim()
                .parse()
                .context("COUNTVB_THREADS must be a positive integer")?;
            anyhow::ensure!(t > 0, "COUNTVB_THREADS must be a positive integer");
            Ok(Some(t))
        }
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate {
            family,
            n,
            seed,
            movie,
            output,
        } => commands::simulate(&SimulateArgs {
            family,
            n,
            seed,
            movie,
            output,
        })?,
        Command::Fit {
            input,
            config,
            family,
            k,
            fit,
            seed,
            output,
            mcmc_samples,
        } => {
            let converged = commands::fit_command(&FitArgs {
                input,
                config,
                family,
                k,
                fit: fit.config(),
                seed,
                output,
                mcmc_samples,
            })?;
            if !converged {
                return Ok(ExitCode::from(EXIT_NOT_CONVERGED));
            }
        }
        Command::Stream {
            input,
            config,
            n,
            seed,
            k,
            n_warm,
            f_update,
            snapshot_every,
            fit,
            output,
        } => {
            let s = commands::stream_command(&StreamArgs {
                input,
                config,
                n,
                seed,
                k,
                n_warm,
                f_update,
                snapshot_every,
                fit: fit.config(),
                output,
            })?;
            eprintln!(
                "{} snapshots, {} accepted, {} rejected, mean ingest latency {:.1} µs",
                s.snapshots, s.accepted, s.rejected, s.mean_latency_us
            );
        }
        Command::Benchmark {
            family,
            replicates,
            n,
            k,
            seed,
            fit,
            burn_in,
            kept,
            thin,
            output,
        } => {
            let config = BenchmarkConfig {
                n,
                k,
                replicates,
                seed,
                fit: fit.config(),
                chain: ChainConfig {
                    burn_in,
                    kept,
                    thin,
                    ..ChainConfig::default()
                },
                threads: threads_from_env()?,
                ..BenchmarkConfig::new(family)
            };
            let results = commands::benchmark_command(&BenchmarkArgs { config, output })?;
            if results.iter().any(|r| !r.converged) {
                return Ok(ExitCode::from(EXIT_NOT_CONVERGED));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
