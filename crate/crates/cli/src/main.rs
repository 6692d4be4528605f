//! `hmlmc`: run Monte Carlo, multilevel Monte Carlo, exhaustive and band
//! structure computations from a TOML configuration.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::{Mode, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] honeycomb_mlmc::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Core(e) if e.is_numerical() => "numerical",
            CliError::Core(_) => "invalid_input",
            CliError::Io(_) | CliError::Json(_) => "io",
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind() {
            "config" | "invalid_input" => 2,
            "numerical" => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hmlmc", version, about = "Density of states of disordered honeycomb materials by (multilevel) Monte Carlo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides the config.
    #[arg(long, env = "HMLMC_WORKERS")]
    workers: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the mode named in the config.
    Run(Common),
    /// Estimate convergence and cost rates.
    Rates(Common),
    /// Exact expectation by enumerating every vacancy configuration.
    Exhaustive(Common),
    /// Band structure of the unperturbed supercell.
    Bands(Common),
}

fn load(common: &Common, mode: Option<Mode>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, mode) = match &cli.command {
        Command::Run(c) => (c, None),
        Command::Rates(c) => (c, Some(Mode::Rates)),
        Command::Exhaustive(c) => (c, Some(Mode::Exhaustive)),
        Command::Bands(c) => (c, Some(Mode::Bands)),
    };
    let result = load(common, mode).and_then(|cfg| run::execute(&cfg));
    match result {
        Ok(summary) => {
            let out = summary["config"]["out"].as_str().unwrap_or_default().to_string();
            eprintln!("done in {:.2}s, artifacts in {out}", summary["total_time_s"].as_f64().unwrap_or(0.0));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = json!({ "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() } });
            eprintln!("{record}");
            ExitCode::from(e.exit_code())
        }
    }
}
