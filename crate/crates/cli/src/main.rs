mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Clue-guided question generation: data preparation, training, decoding
/// and evaluation.
#[derive(Parser)]
#[command(name = "cgcqg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Hyperparameter sources shared by the commands that build a model.
#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// Flat JSON config file; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus and write its vocabulary and labels.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Rank and dependency-path statistics of a corpus.
    Stats {
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the CSV tables and `summary.json`.
        #[arg(long)]
        out: PathBuf,
        /// Number of dependency labels listed in the summary.
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train a model and write checkpoints plus the epoch log.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Held-out corpus for per-epoch dev loss and best-checkpoint selection.
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Pre-trained word vectors, one `word v1 v2 ...` line per word.
        #[arg(long)]
        vectors: Option<PathBuf>,
        /// Stop once an epoch's mean training loss drops below this.
        #[arg(long)]
        stop_below: Option<f64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate questions for passages with answer spans.
    Generate {
        /// Checkpoint file, or a training output directory.
        #[arg(long)]
        model: PathBuf,
        /// Which weights to load from a training directory.
        #[arg(long, value_enum, default_value_t = commands::Weights::Ema)]
        weights: commands::Weights,
        #[arg(long)]
        data: PathBuf,
        /// Output JSONL; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        beam_width: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Score predictions against references.
    Evaluate {
        /// JSONL with `id` and `prediction`.
        #[arg(long)]
        pred: PathBuf,
        /// JSONL with `id` and `question` (a string or a token list), or an
        /// annotated corpus.
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Write a small synthetic corpus.
    MakeToyData {
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output JSONL; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { data, out, config } => commands::ingest(&data, &out, &config),
        Command::Stats { data, out, top, config } => commands::stats(&data, &out, top, &config),
        Command::Train {
            data,
            dev,
            out,
            vectors,
            stop_below,
            config,
        } => commands::train(&data, dev.as_deref(), &out, vectors.as_deref(), stop_below, &config),
        Command::Generate {
            model,
            weights,
            data,
            out,
            beam_width,
            max_len,
        } => commands::generate(&model, weights, &data, out.as_deref(), beam_width, max_len),
        Command::Evaluate { pred, reference } => commands::evaluate(&pred, &reference),
        Command::MakeToyData { n, seed, out } => commands::make_toy_data(n, seed, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
