//! `rspde <command> --config <file> --out <dir>`.
//!
//! Exit codes: 0 success, 1 runtime failure (or a failing self-test),
//! 2 invalid invocation or config, 3 an optimization did not converge.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, ValueEnum};
use serde_json::json;

use commands::{Failure, Outcome};
use output::RunDir;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Simulate,
    Skeleton,
    Rate,
    Quasipotential,
    Invariant,
    Diagnose,
    Selftest,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Skeleton => "skeleton",
            Command::Rate => "rate",
            Command::Quasipotential => "quasipotential",
            Command::Invariant => "invariant",
            Command::Diagnose => "diagnose",
            Command::Selftest => "selftest",
        }
    }
}

/// Reflected stochastic heat equations between two walls.
#[derive(Debug, Parser)]
#[command(name = "rspde", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration (not needed for `selftest`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Omit timestamps and timings so repeated runs are byte-identical.
    #[arg(long)]
    deterministic: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) if !out.converged => {
            eprintln!("warning: optimization did not converge; see manifest.json");
            ExitCode::from(3)
        }
        Ok(out) if out.summary.get("all_pass") == Some(&json!(false)) => ExitCode::from(1),
        Ok(_) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Numerics(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome, Failure> {
    let start = Instant::now();
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(config::ConfigError::new("--threads", "must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(std::io::Error::other)?;
    }
    let timing = |start: Instant| {
        (!cli.deterministic).then(|| {
            let created = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            json!({ "created_unix": created, "elapsed_seconds": start.elapsed().as_secs_f64() })
        })
    };
    if let Command::Selftest = cli.command {
        let mut dir = RunDir::create(&cli.out)?;
        let outcome = commands::selftest(&mut dir)?;
        dir.finish("selftest", &serde_json::Value::Null, outcome.summary.clone(), timing(start))?;
        return Ok(outcome);
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| config::ConfigError::new("--config", "a config file is required"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| config::ConfigError::new("--config", format!("{}: {e}", path.display())))?;
    let cfg = config::parse(&text)?;
    let setup = cfg.setup()?;
    let mut dir = RunDir::create(&cli.out)?;
    let outcome = match cli.command {
        Command::Simulate => commands::simulate(&cfg, &setup, &mut dir),
        Command::Skeleton => commands::skeleton(&cfg, &setup, &mut dir),
        Command::Rate => commands::rate(&cfg, &setup, &mut dir),
        Command::Quasipotential => commands::quasipotential(&cfg, &setup, &mut dir),
        Command::Invariant => commands::invariant(&cfg, &setup, &mut dir),
        Command::Diagnose => commands::diagnose(&cfg, &setup, &mut dir),
        Command::Selftest => unreachable!("handled above"),
    }?;
    dir.write_json("config.json", &cfg)?;
    let echo = serde_json::to_value(&cfg).map_err(std::io::Error::other)?;
    let mut summary = outcome.summary.clone();
    summary["converged"] = json!(outcome.converged);
    dir.finish(cli.command.name(), &echo, summary, timing(start))?;
    Ok(outcome)
}
