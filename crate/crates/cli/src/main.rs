use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use salesrank_cli::error::{CliError, CliResult, Stage};
use salesrank_cli::{run_pipeline, run_stage, simulate, PipelineConfig};

#[derive(Parser)]
#[command(name = "salesrank", version, about = "Infer demand, costs and pricing verdicts from sales-rank panels")]
struct Cli {
    /// Pipeline configuration (TOML); simulation config for `simulate`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the simulation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Halt on rejected rows and group-level failures.
    #[arg(long, global = true)]
    strict: bool,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Worker threads for group-level parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic market with known parameters.
    Simulate,
    Validate,
    Calibrate,
    Demand,
    Costs,
    Optimality,
    Report,
    /// Run every stage, optionally resuming at a later one.
    Pipeline {
        #[arg(long, default_value = "validate")]
        from: String,
    },
}

fn pipeline_config(cli: &Cli) -> CliResult<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(d) = &cli.out_dir {
        cfg.paths.out_dir = d.clone();
    }
    cfg.strict |= cli.strict;
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("cannot start {n} threads: {e}")))?;
    }
    let stage = match &cli.command {
        Command::Simulate => {
            let config = cli
                .config
                .as_deref()
                .ok_or_else(|| CliError::Input("simulate needs --config <sim.toml>".into()))?;
            let out = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
            return simulate::run_simulate(config, cli.seed, &out).map(drop);
        }
        Command::Pipeline { from } => return run_pipeline(&pipeline_config(cli)?, from.parse()?),
        Command::Validate => Stage::Validate,
        Command::Calibrate => Stage::Calibrate,
        Command::Demand => Stage::Demand,
        Command::Costs => Stage::Costs,
        Command::Optimality => Stage::Optimality,
        Command::Report => Stage::Report,
    };
    run_stage(&pipeline_config(cli)?, stage)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
