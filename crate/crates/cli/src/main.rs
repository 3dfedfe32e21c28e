//! `semhash`: train, encode, search and evaluate semantic hashing models.

mod commands;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, CliResult};

/// Worker threads for the rayon pool; unset or 0 lets rayon decide.
const WORKERS_ENV: &str = "SEMHASH_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "semhash", version, about = "Semantic hashing with Bernoulli-latent VAEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long = "output-dir")]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    mode: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push(format!("{k}={v}"));
            }
        };
        push("corpus", self.corpus.as_ref().map(|p| p.display().to_string()));
        push("vocab", self.vocab.as_ref().map(|p| p.display().to_string()));
        push("output_dir", self.output_dir.as_ref().map(|p| p.display().to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("estimator", self.estimator.clone());
        push("mode", self.mode.clone());
        // Dedicated flags win over --set when both name the same key.
        let mut all = self.set.clone();
        all.extend(out);
        all
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
pub enum SweepArg {
    Beta,
    Lambda,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoint, report and manifest.
    Train {
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Encode a corpus split into a binary code file.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
        #[arg(long, short)]
        output: PathBuf,
        /// Also write a `<id> <hex> <labels>` text listing.
        #[arg(long)]
        text: Option<PathBuf>,
    },
    /// Hamming top-k retrieval, printed as TSV.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Restrict to these query doc ids.
        #[arg(long = "doc")]
        docs: Vec<u64>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Precision@k of query codes against database codes, printed as JSON.
    Eval {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
    },
    /// Retrain over a sweep of beta or lambda values; TSV table on stdout.
    Ablate {
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        sweep: SweepArg,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Nearest words in the decoder embedding space.
    Neighbors {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 4)]
        n: usize,
        words: Vec<String>,
    },
    /// Write a synthetic labelled topic corpus.
    Synth {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value_t = 1000)]
        documents: usize,
        #[arg(long = "vocab-size", default_value_t = 500)]
        vocab_size: usize,
        #[arg(long, default_value_t = 5)]
        topics: usize,
        #[arg(long, default_value_t = 0.5)]
        purity: f64,
        #[arg(long, default_value_t = 0.0)]
        multi_label: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn init_workers() -> CliResult<()> {
    let n = match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| CliError::usage(format!("{WORKERS_ENV} must be a non-negative integer, got `{v}`")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::runtime("E_THREADS", e.to_string()))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    init_workers()?;
    match cli.command {
        Command::Train { config, overrides } => commands::train(config.as_deref(), &overrides.pairs()),
        Command::Encode { checkpoint, corpus, vocab, split, output, text } => {
            commands::encode(&checkpoint, &corpus, &vocab, split, &output, text.as_deref())
        }
        Command::Search { index, queries, docs, k } => commands::search(&index, &queries, &docs, k),
        Command::Eval { train, test, k } => commands::eval(&train, &test, k),
        Command::Ablate { config, sweep, values, overrides } => commands::ablate(config.as_deref(), &overrides.pairs(), sweep, &values),
        Command::Neighbors { checkpoint, n, words } => commands::neighbors(&checkpoint, n, &words),
        Command::Synth { corpus, vocab, documents, vocab_size, topics, purity, multi_label, seed } => {
            let cfg = semhash_core::synth::SynthConfig {
                documents,
                vocab_size,
                topics,
                purity,
                multi_label,
                seed,
                ..Default::default()
            };
            commands::synth(&cfg, &corpus, &vocab)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{}", CliError::usage(first.trim_start_matches("error: ")).line());
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit as u8)
        }
    }
}
