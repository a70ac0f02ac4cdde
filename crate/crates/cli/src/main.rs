mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fusion_policy::corpus::Split;
use fusion_policy::model::{CheckDims, Variant};

#[derive(Debug, Parser)]
#[command(
    name = "fusion-policy",
    version,
    about = "Train and evaluate speech/text fusion dialogue policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML file with [synth], [train] and [model] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `train.learning_rate=0.003`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory holding corpus.jsonl and manifest.jsonl.
    #[arg(long)]
    data: PathBuf,
    /// Manifest to read instead of the one in the data directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Use text activations extracted from ASR histories (manifest.asr.jsonl).
    #[arg(long)]
    use_asr: bool,
    /// Act types that answer a user request.
    #[arg(long, value_delimiter = ',')]
    answer_acts: Option<Vec<String>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus with planted text and speech cues.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one architecture and save its checkpoint and metrics.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        arch: Variant,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        weighted_loss: bool,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Directory for eval.json; printed only when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of the full model.
    Gradcheck {
        #[arg(long, default_value = "small")]
        dims: CheckDims,
        /// Check one architecture instead of all four.
        #[arg(long)]
        arch: Option<Variant>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the learned layer weights of a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Aggregate run.json files found under a directory into a table.
    Summarize {
        runs: PathBuf,
        /// Directory for summary.md; printed only when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain, skipping causes already spelled out by the
/// message above them.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}
