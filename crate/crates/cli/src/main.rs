//! `lmk`: build vocabularies, train and pretrain encoders, embed, search,
//! evaluate and run pooling diagnostics.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Bad invocation: unknown flag, command or config key.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Landmark-pooled text embeddings.
///
/// Settings come from a JSON config (`--config`) and can be overridden with
/// `--section.key=value`, e.g. `--training.steps=200`.
#[derive(Debug, Parser)]
#[command(name = "lmk", version)]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a vocabulary TSV from JSONL records and/or triplets.
    BuildVocab {
        #[arg(long)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        triplets: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastive training on query/positive/negatives triplets.
    Train {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        triplets: PathBuf,
        /// Start from this checkpoint instead of a fresh model.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked-autoencoder pretraining on raw texts.
    Pretrain {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a corpus.
    Embed {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact top-k search of queries against a corpus; writes a TREC run.
    Search {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a TREC run against qrels.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pooling diagnostics.
    #[command(subcommand)]
    Diagnose(Diagnose),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Diagnose {
    /// Final-layer attention mass of pooling tokens over document positions.
    Span {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// RoPE logit for all-ones query and key against relative distance.
    Decay {
        #[arg(long, default_value_t = 10_000.0)]
        base: f64,
        #[arg(long, default_value_t = 64)]
        d_head: usize,
        #[arg(long, default_value_t = 1024)]
        max_dist: usize,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hit@k of isolated chunks against in-context landmark states.
    Directional {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Planted-key retrieval at increasing lengths.
    Longctx {
        /// `name=pooling:checkpoint`, repeatable.
        #[arg(long = "model")]
        models: Vec<String>,
        /// Vocabulary of the checkpoints; defaults to the planted-key vocabulary.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Also score the key-bag oracle and a random embedder.
        #[arg(long)]
        baselines: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Landmark tokens added to a sequence.
    Overhead {
        #[arg(long)]
        tokens: usize,
        #[arg(long)]
        granularity: usize,
    },
}

fn main() -> ExitCode {
    let (args, overrides) = config::split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
