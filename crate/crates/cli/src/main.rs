//! `fxrep`: synthesize training data, train the encoder/extractor, and run
//! the retrieval and parameter-matching evaluations.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fxrep", version, about = "Audio-effects representation learning pipeline")]
pub(crate) struct Cli {
    /// Config file (JSON); its `preset` field picks the base defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base preset when no config file is given.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,

    /// Master seed; derives every named seed used by the pipeline.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap; 1 guarantees bit-reproducible output.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
pub(crate) enum Command {
    /// Synthesize stems, write the dataset manifest and normalization profile.
    SynthData {
        /// Output directory.
        #[arg(long, default_value = "out/dataset")]
        out: PathBuf,
    },
    /// Train the encoder and extractor; writes checkpoint + metrics log.
    Train {
        #[arg(long, default_value = "out/train")]
        out: PathBuf,
    },
    /// Effects-retrieval benchmark including the 1..8 effect-count sweep.
    EvalRetrieval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "out/eval-retrieval")]
        out: PathBuf,
        /// Scenarios to run (mixture-level, instrument-oracle, instrument-extracted).
        #[arg(long, value_delimiter = ',', default_values_t = vec![
            "mixture-level".to_string(),
            "instrument-oracle".to_string(),
            "instrument-extracted".to_string(),
        ])]
        scenarios: Vec<String>,
        /// Run the effect-count sweep (1..=8) for the first scenario.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        sweep: bool,
    },
    /// Effects-parameter matching; writes the L_d table.
    EvalMatch {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "out/eval-match")]
        out: PathBuf,
        /// Triplets per instrument class.
        #[arg(long, default_value_t = 4)]
        triplets_per_class: usize,
        /// Use the gain-only template instead of the seven-effect chain.
        #[arg(long, default_value_t = false)]
        gain_only: bool,
    },
    /// Embed WAV files: mixture-level, or instrument-wise with --query.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Instrument class for query-conditioned extraction.
        #[arg(long)]
        query: Option<String>,
        /// External query vectors (text; header line `dim N`).
        #[arg(long)]
        query_file: Option<PathBuf>,
        /// Output file for the embedding vectors (text).
        #[arg(long, default_value = "embeddings.txt")]
        out: PathBuf,
        /// Input WAVs.
        #[arg(required = true)]
        wavs: Vec<PathBuf>,
    },
    /// Render an effects chain (JSON) onto a WAV file.
    FxApply {
        /// Chain description: JSON with `effects: [{effect_type, params}]`.
        #[arg(long)]
        chain: PathBuf,
        input: PathBuf,
        output: PathBuf,
        /// Output sample format: pcm16 or float32.
        #[arg(long, default_value = "float32")]
        format: String,
    },
    /// Run the full gradient-check suite and report per-check results.
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // one-line machine-readable error
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
