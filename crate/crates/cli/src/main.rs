//! `hetdoc` — retrieval-augmented QA over heterogeneous documents.
//!
//! All behavior is driven by one TOML configuration file (see `config.rs`);
//! the exit code is nonzero exactly when configuration, ingestion, or
//! validation fails — never because metrics are low.

mod app;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use crate::app::App;
use crate::config::Settings;

#[derive(Debug, Parser)]
#[command(
    name = "hetdoc",
    version,
    about = "Retrieval-augmented question answering over text and hierarchical tables"
)]
struct Cli {
    /// Path to the TOML configuration file.
    #[arg(short, long, default_value = "config.toml", global = true)]
    config: PathBuf,
    /// Increase log verbosity (-v: info, -vv: debug, -vvv: trace).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate documents and QA records and build the chunk-corpus cache.
    Ingest,
    /// Build (or refresh) the BM25 and embedding indices.
    Index,
    /// Print the merged candidate documents for one question.
    Retrieve {
        /// The question to retrieve for.
        question: String,
    },
    /// Run the full pipeline on one question and print the trace.
    Answer {
        /// The question to answer.
        question: String,
    },
    /// Evaluate the configured split and write report files.
    Eval,
    /// Sweep ensemble depths (n, m) and report candidate counts and
    /// gold containment.
    Grid,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let settings = Settings::load(&cli.config)?;
    let app = App::new(settings)?;
    match &cli.command {
        Command::Ingest => app.ingest(),
        Command::Index => app.index(),
        Command::Retrieve { question } => app.retrieve(question),
        Command::Answer { question } => app.answer(question),
        Command::Eval => app.eval(),
        Command::Grid => app.grid(),
    }
}
