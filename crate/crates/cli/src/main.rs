//! `sensorplace` command-line driver.

mod commands;
mod spec;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::{json, Map, Value};

use commands::{Failure, Report};
use spec::{Command, RunSpec};

/// Optimal sensor placement for kernel-based Bayesian inverse problems.
#[derive(Parser, Debug)]
#[command(name = "sensorplace", version, about)]
struct Args {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// design, oracle, gap-sweep, bench or lidar-sanity.
    #[arg(long)]
    command: Option<String>,
    /// Problem sizes (sweeps, bench) or truncation orders p (lidar-sanity).
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Node constants c for the gap sweep.
    #[arg(long, value_delimiter = ',')]
    constants: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(args: &Args) -> Result<RunSpec, Failure> {
    let mut spec = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            RunSpec::from_text(&text).map_err(Failure::Config)?
        }
        None => RunSpec::default(),
    };
    if let Some(c) = &args.command {
        spec.command = c.parse().map_err(Failure::Config)?;
    }
    if let Some(s) = &args.sizes {
        spec.sizes = s.clone();
    }
    if let Some(c) = &args.constants {
        spec.constants = c.clone();
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(o) = &args.out {
        spec.output_dir = o.clone();
    }
    spec.finish().map_err(Failure::Config)?;
    fs::create_dir_all(&spec.output_dir)
        .map_err(|e| Failure::Config(format!("output directory {} is not writable: {e}", spec.output_dir.display())))?;
    Ok(spec)
}

fn run(spec: &RunSpec) -> Result<Report, Failure> {
    match spec.command {
        Command::Design => commands::design(spec),
        Command::Oracle => commands::oracle(spec),
        Command::GapSweep => commands::gap_sweep(spec),
        Command::Bench => commands::bench(spec),
        Command::LidarSanity => commands::lidar_sanity(spec),
    }
}

fn summary(command: &str, config: Value, result: &Result<Report, Failure>) -> Value {
    match result {
        Ok(r) => json!({
            "command": command,
            "config": config,
            "metrics": r.metrics,
            "timings": r.timings,
            "status": "ok",
        }),
        Err(f) => json!({
            "command": command,
            "config": config,
            "metrics": Map::new(),
            "timings": Map::new(),
            "status": "error",
            "error": { "kind": f.kind(), "message": f.message() },
        }),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let (spec, result) = match load(&args) {
        Ok(spec) => {
            let r = run(&spec);
            (Some(spec), r)
        }
        Err(f) => (None, Err(f)),
    };
    let command = spec
        .as_ref()
        .map(|s| s.command.as_str().to_string())
        .or_else(|| args.command.clone())
        .unwrap_or_default();
    let doc = summary(&command, spec.as_ref().map_or(Value::Null, RunSpec::echo), &result);
    let text = serde_json::to_string_pretty(&doc).expect("summary serializes");
    let _ = writeln!(std::io::stdout(), "{text}");
    if let Some(s) = &spec {
        if let Err(e) = fs::write(s.output_dir.join("summary.json"), format!("{text}\n")) {
            eprintln!("error: cannot write summary.json: {e}");
            return ExitCode::from(3);
        }
    }
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
