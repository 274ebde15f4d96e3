use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use gradiform_cli::config::{load, parse_set, SEED_ENV};
use gradiform_cli::report::write_atomic;
use gradiform_cli::{run, CliError, Command};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Classify,
    Decompose,
    Gradientize,
    Simulate,
    Graham,
    ZooList,
}

/// Gradient-system diagnostics for dynamical systems.
#[derive(Debug, Parser)]
#[command(name = "gradiform", version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set system.params.rho=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-trajectory CSV files (simulate).
    #[arg(long)]
    traj_dir: Option<PathBuf>,
}

fn main_inner(args: Args) -> Result<(), CliError> {
    let overrides = args
        .set
        .iter()
        .map(|s| parse_set(s))
        .collect::<Result<Vec<_>, _>>()?;
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = load(args.config.as_deref(), &overrides, env_seed.as_deref())?;
    let cmd = match args.command {
        Cmd::Classify => Command::Classify,
        Cmd::Decompose => Command::Decompose,
        Cmd::Gradientize => Command::Gradientize,
        Cmd::Simulate => Command::Simulate,
        Cmd::Graham => Command::Graham,
        Cmd::ZooList => Command::ZooList,
    };
    let report = run(cmd, &cfg, args.traj_dir.as_deref())?;
    let text = report.to_json_string();
    let out = args.out.or(cfg.output.out.as_ref().map(PathBuf::from));
    match out {
        Some(path) => write_atomic(&path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match main_inner(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gradiform: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
