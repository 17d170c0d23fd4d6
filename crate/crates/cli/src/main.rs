//! `uqbench`: generate datasets, fit models and reproduce the benchmark figures.

mod manifest;
mod plot;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uqbench_core::harness::{Figure, Method};

#[derive(Debug, Parser)]
#[command(name = "uqbench", version, about = "Predictive uncertainty benchmark for MC dropout, GPs and BNNs")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML settings file; missing keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set mcd_epochs=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Model seed. For `gen` this is the data seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (`gen`) or directory (everything else).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the effective settings as TOML and exit.
    #[arg(long, global = true)]
    show_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        dim: u8,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        /// Scale the noise by sinc of the distance to the origin.
        #[arg(long)]
        sinc_noise: bool,
        /// 1D only: sample the gap interval as well.
        #[arg(long)]
        no_gap: bool,
    },
    /// Fit one model, save it and write its predictive grid.
    Fit {
        #[arg(long)]
        model: Method,
        #[arg(long)]
        data: PathBuf,
        /// Monte Carlo dropout passes at prediction time.
        #[arg(long)]
        passes: Option<usize>,
    },
    /// Predict on the settings grid from a saved model.
    Predict {
        /// The `<method>_model.toml` written by `fit`.
        #[arg(long)]
        model_file: PathBuf,
        /// Training data; defaults to the path recorded at fit time.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        passes: Option<usize>,
    },
    /// Run a figure or table preset.
    Experiment {
        #[arg(long)]
        figure: Figure,
    },
    /// Train one model per seed on fixed data and summarise the errors.
    Sweep {
        #[arg(long, default_value = "mcd")]
        method: Method,
        #[arg(long, default_value_t = 150)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        /// `a..b` (half-open) or a comma-separated list.
        #[arg(long, default_value = "0..100", value_parser = parse_seeds)]
        seeds: Seeds,
    },
    /// Combine independently trained MC dropout models.
    Ensemble {
        #[arg(long, default_value_t = 4)]
        members: usize,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        /// Train the members without dropout.
        #[arg(long)]
        no_train_dropout: bool,
    },
}

#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let bad = |_| format!("bad seed list {s:?}");
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
        (a..b).collect()
    } else {
        s.split(',').map(|v| v.trim().parse().map_err(bad)).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(format!("seed list {s:?} is empty"));
    }
    Ok(Seeds(seeds))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run::dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(run::exit_code(&e))
        }
    }
}
