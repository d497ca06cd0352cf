mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use bytener_core::Error;
use clap::{Parser, Subcommand};

use commands::EmbedArgs;
use config::{CorpusFormat, RunConfig};

/// Byte-level named entity recognition.
#[derive(Parser, Debug)]
#[command(name = "bytener", version, about)]
struct Cli {
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run on a single thread.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a BPE codebook from raw text.
    BpeTrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 5000)]
        merges: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train skip-gram vectors, one sequence per corpus line.
    EmbedTrain {
        #[arg(long)]
        corpus: PathBuf,
        /// Embed BPE subwords instead of whitespace words.
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to 100 with a codebook, 200 without.
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, default_value_t = 5)]
        window: usize,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 5)]
        negatives: usize,
    },
    /// Train a tagger from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Tag a corpus with a trained model, writing byte-offset JSON Lines.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = CorpusFormat::Jsonl)]
        format: CorpusFormat,
    },
    /// Score predictions against gold spans.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Format of the gold file; predictions are always JSON Lines.
        #[arg(long, value_enum, default_value_t = CorpusFormat::Jsonl)]
        format: CorpusFormat,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(Error::Divergence(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::BpeTrain { corpus, merges, out } => commands::bpe_train(&corpus, merges, &out),
        Command::EmbedTrain { corpus, codebook, out, dim, window, epochs, negatives } => {
            commands::embed_train(&EmbedArgs {
                corpus,
                codebook,
                out,
                dim,
                window,
                epochs,
                negatives,
                seed: cli.seed.unwrap_or(0),
            })
        }
        Command::Train { config } => commands::train_cmd(RunConfig::load(&config)?, cli.seed),
        Command::Predict { model, input, out, format } => commands::predict_cmd(&model, &input, format, &out),
        Command::Eval { gold, pred, out, format } => {
            let table = commands::eval_cmd(&gold, &pred, format, out.as_deref())?;
            print!("{table}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
