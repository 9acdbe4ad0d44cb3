mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{Context, RESOLVED_CONFIG};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

/// Noisy-label curation from class names, descriptions and hierarchy.
#[derive(Debug, Parser)]
#[command(name = "sideinfo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Plain-text `key = value` configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory that stage artifacts are read from and written to.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate a synthetic hierarchy-structured dataset and corrupt its labels.
    Simulate,
    /// Build the class relation graph from the taxonomy file.
    BuildGraph,
    /// Train the uniform-weight warmup model and store its predictions.
    Warmup,
    /// Build visual prototypes and per-sample consistence scores.
    Prototypes,
    /// Turn prototype distances into per-sample weights.
    Weigh,
    /// Train the final classifier on the weighted loss.
    Train,
    /// Score the trained classifier.
    Eval,
    /// Run every stage in order.
    Pipeline,
    /// Run the ablation benchmark over several seeds.
    Bench,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.resolve();

    let rendered = config.render();
    print!("{rendered}");
    std::fs::create_dir_all(&cli.out_dir)
        .and_then(|()| std::fs::write(cli.out_dir.join(RESOLVED_CONFIG), &rendered))
        .map_err(|source| sideinfo_core::Error::Io {
            path: cli.out_dir.clone(),
            source,
        })?;

    let ctx = Context {
        config,
        out_dir: cli.out_dir,
    };
    match cli.command {
        Command::Simulate => commands::simulate_cmd(&ctx),
        Command::BuildGraph => commands::build_graph_cmd(&ctx),
        Command::Warmup => commands::warmup_cmd(&ctx),
        Command::Prototypes => commands::prototypes_cmd(&ctx),
        Command::Weigh => commands::weigh_cmd(&ctx),
        Command::Train => commands::train_cmd(&ctx),
        Command::Eval => commands::eval_cmd(&ctx),
        Command::Pipeline => commands::pipeline_cmd(&ctx),
        Command::Bench => commands::bench_cmd(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(CliError::Usage(e.to_string()).exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
