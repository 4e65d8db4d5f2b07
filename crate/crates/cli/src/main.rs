use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use nqtforge::commands::{run, Command, RunOptions};
use nqtforge::config::PipelineConfig;
use nqtforge_core::nqt::SeparatorStyle;

/// NQT question answering: ingest, train, translate, correct, evaluate.
#[derive(Debug, Parser)]
#[command(name = "nqtforge", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Flat `key = value` config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// SPARQL endpoint URL.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the correction audit log.
    #[arg(long)]
    audit: bool,
    #[arg(long)]
    no_correction: bool,
    /// `sep` or `comma`.
    #[arg(long)]
    separator: Option<SeparatorStyle>,
    /// Inject gold NQTs in `e2e` instead of translating.
    #[arg(long)]
    gold: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => match PipelineConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("config stage failed: {e}");
                return ExitCode::FAILURE;
            }
        },
        None => PipelineConfig::default(),
    };
    if let Some(url) = cli.endpoint {
        cfg.endpoint = Some(url);
    }
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(style) = cli.separator {
        cfg.separator = style;
    }
    cfg.audit |= cli.audit;
    cfg.correction &= !cli.no_correction;
    match run(cli.command, &cfg, RunOptions { gold: cli.gold }) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
