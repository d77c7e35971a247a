//! `passive-decoy`: key-rate sweeps, method comparisons and validation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use passive_decoy_cli::commands::{self, Status, CONFIG_ERROR};
use passive_decoy_cli::config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "passive-decoy", version, about = "Passive decoy-state QKD key rates under intensity fluctuations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Passive key rate over distance or intensity fluctuation.
    Sweep(Common),
    /// Fidelity of passive, 2-intensity and 3-intensity decoy methods.
    Compare(Common),
    /// Consistency checks, Monte Carlo agreement and bound soundness.
    Validate(Common),
    /// Print the effective configuration.
    Config(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file (flat `key = value`, `#` comments).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format: csv or jsonl.
    #[arg(long)]
    format: Option<String>,
    /// Random seed for the Monte Carlo oracle and validation grids.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for s in &self.set {
            cfg.set_assignment(s)?;
        }
        if let Some(p) = &self.out {
            cfg.out = Some(p.clone());
        }
        if let Some(f) = &self.format {
            cfg.set("format", f)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    let common = match &cli.command {
        Command::Sweep(c) | Command::Compare(c) | Command::Validate(c) | Command::Config(c) => c,
    };
    let cfg = common.resolve()?;
    if let Some(n) = common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ConfigError(format!("--jobs: {e}")))?;
    }
    let out = cfg.out.as_deref();
    let status = match cli.command {
        Command::Sweep(_) => {
            let (table, status) = commands::sweep(&cfg)?;
            table.emit(cfg.format, out)?;
            status
        }
        Command::Compare(_) => {
            let (table, status) = commands::compare(&cfg)?;
            table.emit(cfg.format, out)?;
            status
        }
        Command::Validate(_) => {
            let (table, status, checks) = commands::validate(&cfg)?;
            table.emit(cfg.format, out)?;
            eprint!("{}", commands::summarize(&checks));
            status
        }
        Command::Config(_) => {
            print!("{}", cfg.serialize());
            Status::Success
        }
    };
    Ok(status)
}

fn is_broken_pipe(e: &(dyn std::error::Error + 'static)) -> bool {
    let io = e.downcast_ref::<std::io::Error>().or_else(|| {
        e.downcast_ref::<csv::Error>().and_then(|c| match c.kind() {
            csv::ErrorKind::Io(io) => Some(io),
            _ => None,
        })
    });
    io.is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(status) => ExitCode::from(status.code()),
        // a closed downstream pipe (e.g. `| head`) is not a failure
        Err(e) if e.chain().any(is_broken_pipe) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = if e.is::<ConfigError>() {
                CONFIG_ERROR
            } else if matches!(e.downcast_ref(), Some(passive_decoy::Error::BeyondCutoff { .. })) {
                Status::BeyondCutoff.code()
            } else {
                Status::Violation.code()
            };
            ExitCode::from(code)
        }
    }
}
