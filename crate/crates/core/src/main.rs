use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use degencontrol::cli::{load_config, run, Subcommand};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Solve,
    Control,
    Observability,
    CarlemanAudit,
}

/// Degenerate parabolic control experiments.
#[derive(Debug, Parser)]
#[command(name = "degencontrol", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides `seed` from the config).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Ok(v) = std::env::var("DEGENCONTROL_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: DEGENCONTROL_THREADS must be a positive integer, got `{v}`");
                return ExitCode::from(2);
            }
        }
    }
    let mut cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args.out.unwrap_or_else(|| cfg.output_dir.clone());
    let sub = match args.command {
        Command::Solve => Subcommand::Solve,
        Command::Control => Subcommand::Control,
        Command::Observability => Subcommand::Observability,
        Command::CarlemanAudit => Subcommand::CarlemanAudit,
    };
    match run(sub, &cfg, &out) {
        Ok(manifest) => {
            println!("{} finished; {} files in {}", manifest.subcommand, manifest.files.len(), out.display());
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(if failure.error.is_config() { 2 } else { 3 })
        }
    }
}
