mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, EXIT_INPUT};

/// Score sentences under masked and autoregressive language models.
#[derive(Debug, Parser)]
#[command(name = "pllbench", version)]
struct Cli {
    /// JSON file with default settings; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Also print errors to stderr as one JSON object per line
    #[arg(long, global = true)]
    json_errors: bool,

    /// Worker threads for scoring (output does not depend on it)
    #[arg(long, global = true, env = "PLLBENCH_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score sentences, one per input line
    Score(commands::ScoreArgs),
    /// Score isolated words inside a neutral frame
    ScoreWords(commands::ScoreWordsArgs),
    /// Evaluate minimal pairs
    Benchmark(commands::BenchmarkArgs),
    /// Per-paradigm accuracy change between two benchmark results
    Diff(commands::DiffArgs),
    /// Side-by-side accuracy table for several benchmark results
    Table(commands::TableArgs),
    /// Correlation analyses written as CSV, SVG and JSON
    Analyze(AnalyzeArgs),
    /// Print the masking schedule of one sentence
    ScheduleDebug(commands::ScheduleDebugArgs),
    /// Share of words split into several tokens
    Oov(commands::OovArgs),
    /// Replay golden fixtures through an exported graph
    Parity(commands::ParityArgs),
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(subcommand)]
    which: Analyze,
}

#[derive(Debug, Subcommand)]
enum Analyze {
    /// Sentence length in tokens against negative score
    Length(commands::LengthArgs),
    /// Log word frequency against in-context word score
    Frequency(commands::FrequencyArgs),
    /// Sentence scores of two score files against each other
    CrossModel(commands::CrossModelArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(n) = cli.threads.or(cfg.threads) {
        if n == 0 {
            return Err(CliError::input("ConfigError", "--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input("ConfigError", e.to_string()))?;
    }
    let ctx = commands::Ctx {
        cfg,
        json_errors: cli.json_errors,
    };
    match cli.command {
        Command::Score(a) => commands::score(&ctx, a),
        Command::ScoreWords(a) => commands::score_words(&ctx, a),
        Command::Benchmark(a) => commands::benchmark(&ctx, a),
        Command::Diff(a) => commands::diff(a),
        Command::Table(a) => commands::table(a),
        Command::Analyze(a) => match a.which {
            Analyze::Length(a) => commands::length(&ctx, a),
            Analyze::Frequency(a) => commands::frequency(&ctx, a),
            Analyze::CrossModel(a) => commands::cross_model(a),
        },
        Command::ScheduleDebug(a) => commands::schedule_debug(&ctx, a),
        Command::Oov(a) => commands::oov(&ctx, a),
        Command::Parity(a) => commands::parity(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let json_errors = std::env::args().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            eprintln!("\n{}", Cli::command().render_usage());
            if json_errors {
                let text = e.to_string();
                let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
                eprintln!("{}", CliError::input("UsageError", first).to_json());
            }
            return ExitCode::from(EXIT_INPUT as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if json_errors {
                eprintln!("{}", e.to_json());
            }
            ExitCode::from(e.exit_code as u8)
        }
    }
}
