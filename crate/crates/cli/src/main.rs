//! `cagen`: ingest, index, retrieve, train, generate, ext, evaluate, report.
//!
//! Exit codes: 0 success, 2 invalid input, 3 runtime failure. Every command
//! writes a run manifest next to its output.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use cagen_core::metrics::TableFormat;
use cagen_core::Setting;
use cagen_pipeline::Regime;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cagen", version, about = "Plan-guided answer generation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TableKind {
    Answer,
    Plan,
    Both,
}

#[derive(Subcommand)]
pub enum Command {
    /// Build answer examples from paragraphs and outline pages.
    Ingest {
        #[arg(long)]
        paragraphs: PathBuf,
        #[arg(long)]
        pages: PathBuf,
        #[arg(long, default_value = "structured")]
        setting: Setting,
        /// Keep the first half of the pages by query id.
        #[arg(long = "half-fold0")]
        half_fold0: bool,
        /// Drop plan-less pages in the plain setting too, so both settings
        /// share one page set.
        #[arg(long)]
        require_plan: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the BM25 index over all paragraphs.
    Index {
        #[arg(long)]
        paragraphs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a TREC run for every example query.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        examples: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one regime from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        regime: Regime,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate answers with a trained pipeline.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        regime: Regime,
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extractive reference answers built from the retrieved documents.
    Ext {
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value = "structured")]
        setting: Setting,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against gold examples.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value = "structured")]
        setting: Setting,
        /// Row label; defaults to the prediction file stem.
        #[arg(long)]
        label: Option<String>,
        /// Bootstrap resamples for the ROUGE-L F midpoint.
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render metric reports as tables.
    Report {
        #[arg(long, required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long, default_value = "markdown")]
        format: TableFormat,
        #[arg(long, value_enum, default_value = "both")]
        table: TableKind,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
