use clap::{Parser, Subcommand};
use markovup::config::CampaignConfig;
use markovup::pipeline::{self, PipelineError};
use std::path::PathBuf;
use std::process::ExitCode;

/// Simulate, audit and verify one-sided Markov processes against their
/// certified recurrence bounds.
#[derive(Debug, Parser)]
#[command(name = "markovup", version)]
struct Cli {
    /// Campaign configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides the config's output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (0 = automatic). Falls back to MARKOVUP_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample one trajectory per start and export them as CSV.
    Simulate,
    /// Audit the law's assumption profile into JSON.
    Audit,
    /// Sweep the certified bound constants over the configured alphas.
    Bounds,
    /// Run the Monte Carlo / exact dominance report.
    Verify,
    /// Solve the extended chain for exact hitting moments.
    Exact,
    /// Run the whole pipeline and write a merged summary.
    Report,
}

fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var("MARKOVUP_THREADS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let config_path = cli
        .config
        .ok_or_else(|| PipelineError::Config("--config is required".into()))?;
    let mut config = CampaignConfig::from_path(&config_path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out_dir = cli.out.unwrap_or_else(|| PathBuf::from(&config.output_dir));

    let threads = resolve_threads(cli.threads);
    let work = |config: &CampaignConfig| match cli.command {
        Command::Simulate => pipeline::run_simulate(config, &out_dir),
        Command::Audit => pipeline::run_audit(config, &out_dir),
        Command::Bounds => pipeline::run_bounds(config, &out_dir),
        Command::Verify => pipeline::run_verify(config, &out_dir),
        Command::Exact => pipeline::run_exact(config, &out_dir),
        Command::Report => pipeline::run_report(config, &out_dir),
    };
    let written = if threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| PipelineError::Runtime(e.to_string()))?;
        pool.install(|| work(&config))?
    } else {
        work(&config)?
    };
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ PipelineError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
