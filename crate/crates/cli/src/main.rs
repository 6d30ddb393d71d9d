//! Command-line surface for the patch-descriptor anomaly detector:
//! synthetic dataset generation, training, scoring, evaluation, and
//! configuration sweeps. Every command is deterministic given its seed,
//! configuration and data.

mod commands;
mod descfile;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "mhpc", version, about = "Bounded-memory covariance-aware patch anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic anisotropic descriptor dataset with manifests.
    Synth {
        /// Synthesis spec (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for descriptor files and manifests.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the spec.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a detector from a train manifest and save its state.
    Fit {
        #[arg(long)]
        manifest: PathBuf,
        /// Detector configuration (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output path for the state container.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a manifest with a saved detector state.
    Score {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Score records (JSONL); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for per-image patch-score map files.
        #[arg(long)]
        maps: Option<PathBuf>,
    },
    /// Compute image-level AUROC from labelled score records.
    Eval {
        /// Score records produced by `score`.
        scores: PathBuf,
        /// Full report destination (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a sweep of configurations and tabulate quality and resources.
    Bench {
        /// Train manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Sweep definition (JSON) naming the test manifest and configs.
        #[arg(long)]
        sweep: PathBuf,
        /// Machine-readable results (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { config, out, seed } => commands::synth::run(&config, &out, seed),
        Command::Fit {
            manifest,
            config,
            out,
            seed,
        } => commands::fit::run(&manifest, config.as_deref(), &out, seed),
        Command::Score {
            state,
            manifest,
            out,
            maps,
        } => commands::score::run(&state, &manifest, out.as_deref(), maps.as_deref()),
        Command::Eval { scores, out } => commands::eval::run(&scores, out.as_deref()),
        Command::Bench {
            manifest,
            sweep,
            out,
        } => commands::bench::run(&manifest, &sweep, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": format!("{e:#}") })
            );
            ExitCode::FAILURE
        }
    }
}
