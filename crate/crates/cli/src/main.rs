//! `hamid`: simulate coherent-oscillation experiments and characterize the
//! Hamiltonian and decoherence rates from their spectra.
//!
//! Exit codes: 0 success, 1 usage or I/O failure, 2 statistical or
//! convergence failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hamid_core::{ModelKind, PadPolicy, ScalingConfig};

use crate::commands::Status;
use crate::config::{load_constraints, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "hamid", version, about = "Two-level system identification from simulated oscillation data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed of a single replicate; replaces `replicate_seeds`.
    #[arg(long, global = true, env = "HAMID_SEED")]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_model)]
    model: Option<ModelKind>,
    /// Constraints JSON: output of `hamid aux` or explicit fit constraints.
    #[arg(long, global = true)]
    constraints: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for replicates (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample experiment records and write `series_<seed>.csv`.
    Simulate {
        /// Write exact expectation values instead of sampled means.
        #[arg(long)]
        noiseless: bool,
    },
    /// Fit a model to recorded series; writes `fit.json` and `spectrum.csv`.
    Characterize {
        /// Series CSV files; when absent the config's truth is simulated.
        #[arg(long = "input", num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        noiseless: bool,
        /// Confidence level of the reported intervals, in standard deviations
        /// [default: 3].
        #[arg(long)]
        sigma_level: Option<f64>,
        #[arg(long, value_parser = parse_pad)]
        pad: Option<PadPolicy>,
    },
    /// Run the d = 0 relaxation experiment and write `constraints.json`.
    Aux {
        #[arg(long)]
        noiseless: bool,
    },
    /// Fractional uncertainty against total measurement count.
    ScalingStudy {
        /// Ensemble sizes, comma separated.
        #[arg(long = "n-e", value_delimiter = ',')]
        n_e: Vec<u64>,
        /// Replicates per ensemble size.
        #[arg(long)]
        seeds: Option<usize>,
        /// Confidence level of the tracked uncertainties [default: 1].
        #[arg(long)]
        sigma_level: Option<f64>,
    },
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: hamid_core::Error| e.to_string())
}

fn parse_pad(s: &str) -> Result<PadPolicy, String> {
    match s {
        "auto" => Ok(PadPolicy::Auto),
        "always" => Ok(PadPolicy::Always),
        "never" => Ok(PadPolicy::Never),
        other => Err(format!("unknown padding policy '{other}' (expected auto, always or never)")),
    }
}

fn build_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        if let Some(e) = cfg.experiment.as_mut() {
            e.seed = seed;
        }
        cfg.replicate_seeds = vec![seed];
    }
    if let Some(m) = c.model {
        cfg.model = m;
    }
    if let Some(p) = &c.constraints {
        cfg.constraints = load_constraints(p)?;
    }
    if let Some(o) = &c.out {
        cfg.outputs = o.clone();
    }
    match &cli.command {
        Command::Simulate { noiseless } | Command::Aux { noiseless } => cfg.noiseless |= noiseless,
        Command::Characterize { inputs, noiseless, pad, .. } => {
            cfg.noiseless |= noiseless;
            if !inputs.is_empty() {
                cfg.inputs = inputs.clone();
            }
            if let Some(p) = pad {
                cfg.pad = *p;
            }
        }
        Command::ScalingStudy { n_e, seeds, .. } => {
            if !n_e.is_empty() || seeds.is_some() {
                let prev = cfg.scaling.take();
                cfg.scaling = Some(ScalingConfig {
                    n_e: if n_e.is_empty() { prev.as_ref().map(|s| s.n_e.clone()).unwrap_or_default() } else { n_e.clone() },
                    seeds: seeds.or(prev.map(|s| s.seeds)).unwrap_or(0),
                });
            }
            // a single --seed pins the study's base seed, not its replicates
            cfg.replicate_seeds.clear();
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<Status> {
    if let Some(n) = cli.common.workers {
        anyhow::ensure!(n >= 1, "--workers must be at least 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = build_config(cli)?;
    match &cli.command {
        Command::Simulate { .. } => commands::simulate(&cfg),
        Command::Characterize { sigma_level, .. } => {
            commands::characterize_cmd(&cfg, sigma_level.or(cfg.sigma_level).unwrap_or(3.0))
        }
        Command::Aux { .. } => commands::aux(&cfg),
        Command::ScalingStudy { sigma_level, .. } => {
            commands::scaling(&cfg, sigma_level.or(cfg.sigma_level).unwrap_or(1.0))
        }
    }
}

/// Statistical failures of the data or the model exit with 2, everything
/// else with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    let statistical =
        err.chain().any(|e| e.downcast_ref::<hamid_core::Error>().is_some_and(hamid_core::Error::is_statistical));
    if statistical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Degraded) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
