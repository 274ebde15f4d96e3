//! Batch front end: config resolution, the six pipelines and the JSON
//! report.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::Path;

pub use config::RunConfig;
pub use error::CliError;
pub use report::Report;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Classify,
    Decompose,
    Gradientize,
    Simulate,
    Graham,
    ZooList,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Decompose => "decompose",
            Command::Gradientize => "gradientize",
            Command::Simulate => "simulate",
            Command::Graham => "graham",
            Command::ZooList => "zoo-list",
        }
    }
}

/// Runs `cmd`; `traj_dir` overrides `output.traj_dir`.
pub fn run(cmd: Command, cfg: &RunConfig, traj_dir: Option<&Path>) -> Result<Report, CliError> {
    match cmd {
        Command::Classify => commands::cmd_classify(cfg),
        Command::Decompose => commands::cmd_decompose(cfg),
        Command::Gradientize => commands::cmd_gradientize(cfg),
        Command::Simulate => {
            let dir = traj_dir.or(cfg.output.traj_dir.as_deref().map(Path::new));
            commands::cmd_simulate(cfg, dir)
        }
        Command::Graham => commands::cmd_graham(cfg),
        Command::ZooList => commands::cmd_zoo_list(cfg),
    }
}
