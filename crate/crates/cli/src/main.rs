use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use occsel_cli::{run_pipeline, Command, PipelineError, RunConfig};
use occsel_core::par::{init_thread_pool, Execution};

/// Objective Bayesian variable selection for occupancy models.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// simulate, select, aic or report.
    #[arg(value_enum)]
    command: Command,
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides the configuration. 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(args: Args) -> Result<Vec<PathBuf>, PipelineError> {
    let mut config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(t) = args.threads {
        config.threads = t;
    }
    if let Some(o) = args.out {
        config.output = o;
    }
    if config.threads > 0 {
        init_thread_pool(config.threads);
    }
    run_pipeline(config, args.command, Execution::Parallel)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Args::parse()) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
