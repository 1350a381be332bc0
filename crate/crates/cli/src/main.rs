use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tailrank_cli::commands;
use tailrank_cli::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "tailrank", version, about = "Snippet attractiveness ranking pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "configs/default.toml")]
    config: PathBuf,
    /// Replaces the seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `dotted.key=value` patch applied to the configuration; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate a synthetic click log, snippets and judgments.
    Simulate,
    /// Fit the click model on all sessions.
    FitDbn,
    /// Build the attractive-word lexicon from fitted attractiveness.
    Lexicon,
    /// Extract snippet features for every (query, url).
    Features,
    /// Train the attractiveness models with and without click features.
    TrainAttr,
    /// Train the relevance rankers on judged queries.
    TrainRank,
    /// Rerank judged queries with both strategies.
    Rerank,
    /// Evaluate every model on held-out queries.
    Eval,
    /// Run every step in order.
    Run,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::FitDbn => "fit-dbn",
            Command::Lexicon => "lexicon",
            Command::Features => "features",
            Command::TrainAttr => "train-attr",
            Command::TrainRank => "train-rank",
            Command::Rerank => "rerank",
            Command::Eval => "eval",
            Command::Run => "run",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = RunConfig::load(&cli.config, cli.seed, &cli.overrides)
        .and_then(|cfg| commands::dispatch(cli.command.name(), &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
