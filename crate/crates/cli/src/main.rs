mod commands;
mod settings;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use paste_core::corpus::Split;

use settings::{DataArgs, ModelArgs, TrainArgs};

#[derive(Debug, Parser)]
#[command(name = "paste", version, about = "Opinion triplet extraction with pointer networks")]
struct Cli {
    /// Log progress at info level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dataset statistics per split.
    Stats {
        #[command(flatten)]
        data: DataArgs,
        /// Also write JSON and text reports here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train one model per seed and report medians.
    Train(TrainArgs),
    /// Score a checkpoint on a split or file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// Evaluate this file instead of a dataset split.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Decode triplets for every sentence of a file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Canonical JSONL with a `predicted` field; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train a baseline and an ablated variant under shared seeds.
    Ablate {
        #[arg(long, value_enum)]
        ablation: Ablation,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Shuffle target order every epoch.
    RandomOrder,
    /// Drop POS and DEP embeddings.
    NoPosdep,
    /// Control: identical to the baseline.
    None,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse()
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Stats { data, out_dir } => commands::stats(&data, out_dir.as_deref()),
        Command::Train(args) => commands::train(&args),
        Command::Eval {
            checkpoint,
            data,
            model,
            split,
            input,
            out_dir,
        } => commands::eval(&checkpoint, &data, &model, split, input.as_deref(), out_dir.as_deref()),
        Command::Predict {
            checkpoint,
            input,
            output,
            data,
            model,
        } => commands::predict(&checkpoint, &input, output.as_deref(), &data, &model),
        Command::Ablate { ablation, train } => commands::ablate(ablation, &train),
    }
}
