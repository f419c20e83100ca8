use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bymscan_cli::commands::{cmd_fit, cmd_scan, cmd_synth, RunContext};
use bymscan_cli::config::{EngineConfig, Overrides};

#[derive(Parser)]
#[command(name = "bymscan", version, about = "Segmented spatio-temporal scan engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the sampler/generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (also BYMSCAN_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the retained posterior draws as CSV.
    #[arg(long)]
    emit_draws: bool,
    /// Worker threads, 0 = automatic (also BYMSCAN_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model configuration and write its report.
    Fit(RunArgs),
    /// Run the (threshold, lag) grid and emit the scan CSV and figure.
    Scan(RunArgs),
    /// Generate a synthetic panel with known ground truth.
    Synth(RunArgs),
    /// Print the default configuration file.
    PrintConfig,
}

fn run(args: &RunArgs, body: fn(&RunContext) -> Result<(), bymscan_cli::error::CliError>) -> ExitCode {
    let overrides = Overrides {
        seed: args.seed,
        out: args.out.clone(),
        emit_draws: args.emit_draws,
        threads: args.threads,
    };
    let ctx = match RunContext::new(&args.config, &overrides) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let threads = overrides.resolve_threads(&ctx.config);
    if threads > 0 {
        // Ignore failure if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match body(&ctx) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Fit(args) => run(args, cmd_fit),
        Command::Scan(args) => run(args, cmd_scan),
        Command::Synth(args) => run(args, cmd_synth),
        Command::PrintConfig => {
            print!("{}", EngineConfig::default_toml());
            ExitCode::SUCCESS
        }
    }
}
