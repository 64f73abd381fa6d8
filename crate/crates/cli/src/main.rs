mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Common, Overrides};

#[derive(Parser, Debug)]
#[command(name = "tsam", version, about = "Find the utterances that cause an emotion in a conversation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write `checkpoint.json` and `history.json`.
    Train {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Second checkpoint for a paired bootstrap comparison.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = tsam::eval::MIN_RESAMPLES)]
        resamples: usize,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Generate a synthetic dataset with planted causes.
    Synth {
        /// Number of conversations.
        #[arg(long)]
        n: Option<usize>,
        /// Split into `train,dev,test` files with these sizes instead.
        #[arg(long, value_delimiter = ',')]
        split: Option<Vec<usize>>,
    },
    /// Finite-difference check of every layer.
    Gradcheck {
        /// Number of consecutive seeds to check, starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Train and compare model variants.
    Ablate {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Every emotion × speaker × interaction combination.
        #[arg(long)]
        grid: bool,
    },
    /// Dev macro F1 as a function of the number of layers.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        min_layers: usize,
        #[arg(long, default_value_t = 6)]
        max_layers: usize,
    },
    /// Positive/negative pair counts and cause-type mixture.
    Stats {
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
    },
    /// Convert a RECCON-DD annotation file to the line-delimited format.
    Convert {
        #[arg(long)]
        reccon: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.common, cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
