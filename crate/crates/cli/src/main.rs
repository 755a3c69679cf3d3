use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hk_chaos::harness::{load_config, resolve_seed, run_in_pool, ExperimentConfig, ExperimentKind};
use hk_chaos::kernel::RegularizedKernel;
use hk_chaos::Error;

#[derive(Parser)]
#[command(name = "hk-chaos", version, about = "Hegselmann-Krause opinion dynamics with common noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the particle system and write particles.csv
    Simulate(Common),
    /// Solve the stochastic Fokker-Planck equation and write density.csv
    Spde(Common),
    /// Propagation-of-chaos sweep (chaos-weak, chaos-strong or density-distance per the config)
    ChaosSweep(Common),
    /// Print the regularized kernel property report as JSON
    KernelReport(Common),
    /// Run the invariant suite and write validation.csv
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config; every key has a default
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed and HK_CHAOS_SEED
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (default: the config's `out`, else ./out)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn prepare(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut config = match &common.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    config.seed = resolve_seed(config.seed, common.seed)?;
    if let Some(out) = &common.out {
        config.out = Some(out.clone());
    }
    Ok(config)
}

fn execute(command: Command) -> Result<i32, Error> {
    let (common, kind) = match &command {
        Command::Simulate(c) => (c, Some(ExperimentKind::Simulate)),
        Command::Spde(c) => (c, Some(ExperimentKind::Spde)),
        Command::Validate(c) => (c, Some(ExperimentKind::Validate)),
        Command::ChaosSweep(c) | Command::KernelReport(c) => (c, None),
    };
    let mut config = prepare(common)?;
    if let Command::KernelReport(_) = command {
        let step = config.grid.dx.min(config.tau / 8.0);
        let report = RegularizedKernel::build(config.radius, config.tau, step)?.property_report();
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        let _ = writeln!(std::io::stdout(), "{text}");
        return Ok(if report.all_passed { 0 } else { 3 });
    }
    match kind {
        Some(k) => config.experiment = k,
        None if !config.experiment.is_chaos() => config.experiment = ExperimentKind::ChaosWeak,
        None => {}
    }
    config.validate()?;
    let out = config.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let summary = run_in_pool(&config, &out, common.threads)?;
    for check in summary.validation.iter().filter(|c| !c.passed) {
        eprintln!("check failed: {} (value {}, tolerance {})", check.name, check.value, check.tolerance);
    }
    for failure in &summary.failures {
        eprintln!("replica {} aborted: {}", failure.replica, failure.message);
    }
    eprintln!("wrote {}", out.display());
    Ok(summary.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            let record = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
