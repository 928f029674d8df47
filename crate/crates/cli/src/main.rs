//! `porc`: ingest, pretrain, extract, evaluate and report from one binary.
//!
//! Exit codes: 0 success, 1 usage, 2 data or format, 3 numerical failure.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{seed_from_env, CliConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "porc", version, about = "Pathology foundation-model pipeline at desk scale")]
struct Cli {
    /// JSON configuration; omitted keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted override such as `ssl.lr_peak=0.001`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run seed; falls back to PORC_SEED, then the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every logical core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Raise log verbosity; repeatable.
    #[arg(long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tile a slide image, detect tissue and sample patches.
    Ingest(commands::IngestArgs),
    /// Self-supervised pretraining on a directory of images.
    Pretrain(commands::PretrainArgs),
    /// Teacher features for a directory of images.
    Extract(commands::ExtractArgs),
    /// Linear probe on frozen features.
    Probe(commands::ProbeArgs),
    /// Attention-based multiple-instance classifier over bags.
    Mil(commands::MilArgs),
    /// Nearest-neighbour retrieval.
    Knn(commands::KnnArgs),
    /// Leave-one-patient-out gene-expression regression.
    Genes(commands::GenesArgs),
    /// Classification metrics from a predictions CSV.
    Metrics(commands::MetricsArgs),
    /// Run one registry task on its synthetic fixture.
    RunTask(commands::RunTaskArgs),
    /// Run registry tasks and summarise them.
    RunSuite(commands::RunSuiteArgs),
    /// Compose structured reports and score stain agreement.
    Report(commands::ReportArgs),
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = CliConfig::resolve(cli.config.as_deref(), &cli.overrides, cli.seed, seed_from_env()?)?;
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
        log::warn!("worker pool already initialised: {e}");
    }
    log::info!("seed {} config sha256 {}", cfg.seed, cfg.hash());
    match &cli.command {
        Command::Ingest(a) => commands::ingest(a, &cfg),
        Command::Pretrain(a) => commands::pretrain_cmd(a, &cfg),
        Command::Extract(a) => commands::extract(a),
        Command::Probe(a) => commands::probe(a, &cfg),
        Command::Mil(a) => commands::mil(a, &cfg),
        Command::Knn(a) => commands::knn(a),
        Command::Genes(a) => commands::genes(a, &cfg),
        Command::Metrics(a) => commands::metrics(a),
        Command::RunTask(a) => commands::run_task_cmd(a, &cfg),
        Command::RunSuite(a) => commands::run_suite_cmd(a, &cfg),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
