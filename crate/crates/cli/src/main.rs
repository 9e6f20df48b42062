//! `amen` — train, evaluate and inspect the attention-enhanced multi-branch
//! classifier from the command line.
//!
//! All outputs land under each command's `--out` directory; nothing is
//! written elsewhere. Commands never prompt. `AMEN_THREADS` caps worker
//! parallelism (results do not depend on it).

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use amen_core::config::{Overrides, Profile};
use amen_core::error::Result;

#[derive(Parser)]
#[command(name = "amen", version, about = "Multi-branch attention-enhanced image classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct OverrideArgs {
    /// Random seed (overrides the config file)
    #[arg(long)]
    seed: Option<u64>,
    /// Defaults profile: `desk` or `paper`
    #[arg(long)]
    profile: Option<String>,
    /// Number of scales (branches)
    #[arg(long)]
    scales: Option<usize>,
    /// Enhancement weight applied to every scale after the first
    #[arg(long)]
    lambda: Option<f64>,
}

impl OverrideArgs {
    fn to_overrides(&self) -> Result<Overrides> {
        let profile = match &self.profile {
            Some(p) => Some(Profile::from_str(p)?),
            None => None,
        };
        Ok(Overrides {
            profile,
            scales: self.scales,
            lambda: self.lambda,
            seed: self.seed,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset whose class is a small oriented stripe
    GenData {
        /// Number of images (even, balanced classes)
        #[arg(long)]
        n: usize,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
        #[arg(long, default_value_t = 5)]
        detail_size: usize,
        /// Background noise amplitude in [0, 1]
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
    },
    /// Train the multi-branch pipeline and write a run directory
    Train {
        /// JSON config file (defaults apply when omitted)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory containing manifest.csv
        #[arg(long)]
        data: PathBuf,
        /// Run directory to create
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Score an existing run's checkpoints on a dataset
    Eval {
        /// Run directory produced by `train`
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Independent-repeats baseline (Average/Boosting) versus the pipeline
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of independent single-branch trainings
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Rerun the pipeline across the weight grid 1e-5..1e-2
    SweepLambda {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Re-emit per-image attention maps from a run's checkpoints
    ExportAttention {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_threads() {
    if let Ok(v) = std::env::var("AMEN_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                // Ignore failure: the pool may already exist in tests.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            n,
            out,
            seed,
            image_size,
            detail_size,
            noise,
        } => commands::gen_data(n, &out, seed, image_size, detail_size, noise),
        Command::Train {
            config,
            data,
            out,
            overrides,
        } => commands::train(config.as_deref(), &data, &out, &overrides.to_overrides()?),
        Command::Eval { run, data, out } => commands::eval(&run, &data, &out),
        Command::Ablate {
            config,
            data,
            out,
            repeats,
            overrides,
        } => commands::ablate(
            config.as_deref(),
            &data,
            &out,
            repeats,
            &overrides.to_overrides()?,
        ),
        Command::SweepLambda {
            config,
            data,
            out,
            overrides,
        } => commands::sweep_lambda(config.as_deref(), &data, &out, &overrides.to_overrides()?),
        Command::ExportAttention { run, data, out } => {
            commands::export_attention(&run, &data, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse(); // usage errors exit 2
    init_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
