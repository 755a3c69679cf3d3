use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use super::validate::{validation_suite, ValidationCheck};
use super::{ExperimentConfig, ExperimentKind};
use crate::chaos::{
    coupled_sweep, coupling_bound, density_distance_experiment, fit_front_factor, theoretical_bound, BoundConstants,
    ChaosResult, Parts, ReplicaFailure,
};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::noise::{environment_increments, NoiseBundle, StreamKey};
use crate::particles::{simulate, SimConfig};
use crate::spde::{auto_grid, project_initial, solve, step_count, Monitor, SpdeConfig};

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunSummary {
    pub outputs: Vec<PathBuf>,
    pub monitor: Monitor,
    pub failures: Vec<ReplicaFailure>,
    pub validation: Vec<ValidationCheck>,
}

impl RunSummary {
    /// 0 when everything ran clean, 3 when replicas aborted or a check failed.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() && self.validation.iter().all(|c| c.passed) {
            0
        } else {
            3
        }
    }
}

fn write_file(dir: &Path, name: &str, contents: &str, summary: &mut RunSummary) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    summary.outputs.push(path);
    Ok(())
}

/// Runs `config` inside a worker pool of `threads` threads (all cores when `None`).
pub fn run_in_pool(config: &ExperimentConfig, out_dir: &Path, threads: Option<usize>) -> Result<RunSummary> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = threads {
        builder = builder.num_threads(k.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run(config, out_dir))
}

/// Runs the experiment, writing CSVs, `resolved_config.toml` and `manifest.json`
/// into `out_dir`. A failing run still leaves a manifest with the failure record.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let mut summary = RunSummary::default();
    write_file(out_dir, "resolved_config.toml", &config.to_toml_string()?, &mut summary)?;
    let outcome = match config.experiment {
        ExperimentKind::Simulate => run_simulate(config, out_dir, &mut summary),
        ExperimentKind::Spde => run_spde(config, out_dir, &mut summary),
        ExperimentKind::ChaosWeak | ExperimentKind::ChaosStrong | ExperimentKind::DensityDistance => {
            run_chaos(config, out_dir, &mut summary)
        }
        ExperimentKind::Validate => run_validate(config, out_dir, &mut summary),
    };
    let failure = outcome.as_ref().err().map(|e| json!({ "kind": e.kind(), "message": e.to_string() }));
    let manifest = json!({
        "experiment": config.experiment.name(),
        "seed": config.seed,
        "versions": { "hk-chaos-core": env!("CARGO_PKG_VERSION") },
        "threads": rayon::current_num_threads(),
        "wall_time_s": start.elapsed().as_secs_f64(),
        "status": if outcome.is_ok() && summary.exit_code() == 0 { "ok" } else { "failed" },
        "failure": failure,
        "monitor": {
            "max_mass_drift": summary.monitor.max_mass_drift,
            "max_negative_clip": summary.monitor.clipped_mass,
            "min_value_before_clip": summary.monitor.min_value,
            "max_l2": summary.monitor.max_l2,
            "max_courant": summary.monitor.max_courant,
        },
        "aborted_replicas": summary.failures,
        "validation": summary.validation,
        "outputs": summary.outputs.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect::<Vec<_>>(),
    });
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("json") + "\n")?;
    outcome?;
    summary.outputs.push(out_dir.join("manifest.json"));
    Ok(summary)
}

fn run_simulate(config: &ExperimentConfig, out: &Path, summary: &mut RunSummary) -> Result<()> {
    let n_steps = step_count(config.t_end, config.dt)?;
    let cfg = SimConfig::new(config.n, config.t_end, config.dt, config.sigma, config.nu, config.interaction(config.grid.dx)?)?
        .with_checkpoints(&config.checkpoints)?;
    let bundle = NoiseBundle::generate(config.seed, config.n, n_steps, config.dt, &config.rho0)?;
    let ensembles = simulate(&cfg, &bundle)?;
    let mut csv = String::from("t,particle_id,position\n");
    for e in &ensembles {
        for (i, x) in e.positions.iter().enumerate() {
            writeln!(csv, "{},{},{}", e.time, i, x).unwrap();
        }
    }
    write_file(out, "particles.csv", &csv, summary)
}

pub(crate) fn spde_grid(config: &ExperimentConfig) -> Result<Grid> {
    match (config.grid.x0, config.grid.x1) {
        (Some(a), Some(b)) => Grid::covering(a, b, config.grid.dx),
        _ => auto_grid(&config.rho0, &config.sigma, config.nu, config.t_end, &config.interaction(config.grid.dx)?, config.grid.dx),
    }
}

fn run_spde(config: &ExperimentConfig, out: &Path, summary: &mut RunSummary) -> Result<()> {
    let grid = spde_grid(config)?;
    let interaction = config.interaction(grid.dx)?;
    let cfg = SpdeConfig::new(config.sigma, config.nu, interaction, grid, config.dt, config.t_end)?
        .with_checkpoints(&config.checkpoints)?;
    let rho0 = project_initial(&config.rho0, grid)?;
    let dw = environment_increments(StreamKey::new(config.seed, 0), cfg.n_steps, cfg.dt);
    let sol = solve(&cfg, config.scheme, &rho0, &dw)?;
    summary.monitor.merge(&sol.monitor);
    let mut csv = String::from("t,x,rho\n");
    for c in &sol.checkpoints {
        for (i, v) in c.values.iter().enumerate() {
            writeln!(csv, "{},{},{}", c.time, c.lab_x(i), v).unwrap();
        }
    }
    write_file(out, "density.csv", &csv, summary)
}

fn results_csv(result: &ChaosResult) -> String {
    let mut csv = String::from("experiment,N,tau,t,phi,error,stderr,replicas\n");
    for r in &result.rows {
        writeln!(csv, "{},{},{},{},{},{},{},{}", r.experiment, r.n, r.tau, r.t, r.phi, r.error, r.stderr, r.replicas).unwrap();
    }
    csv
}

fn rates_csv(result: &ChaosResult) -> String {
    let mut csv = String::from("experiment,tau,phi,slope,r2\n");
    for r in &result.rates {
        writeln!(csv, "{},{},{},{},{}", r.experiment, r.tau, r.phi, r.slope, r.r2).unwrap();
    }
    csv
}

/// Bound curves at the horizon, with the front factor fitted per observable
/// unless the config fixes it.
fn bounds_csv(config: &ExperimentConfig, result: &ChaosResult) -> Result<String> {
    let kernel = config.chaos_setup()?.regularized_kernel(config.tau)?;
    let base = BoundConstants {
        kernel_l2_sq: 2.0 * config.radius.powi(3) / 3.0,
        big_lambda: config.sigma.big_lambda(),
        c: kernel.derivative_constant(),
        kernel_gap_sq: kernel.l2_distance().powi(2),
        c_front: 1.0,
    };
    let mut csv = String::from("experiment,N,tau,phi,error,bound,c_front\n");
    let mut groups: Vec<(String, String)> = Vec::new();
    for r in &result.rows {
        let key = (r.experiment.clone(), r.phi.clone());
        if r.n > 0 && r.tau > 0.0 && !groups.contains(&key) {
            groups.push(key);
        }
    }
    for (experiment, phi) in groups {
        let rows: Vec<_> = result
            .rows
            .iter()
            .filter(|r| r.experiment == experiment && r.phi == phi && (r.t - config.t_end).abs() < 1e-12)
            .collect();
        let strong = experiment.starts_with("chaos-strong");
        let shape = |n: usize| {
            if strong {
                coupling_bound(n, config.tau, config.t_end, &base)
            } else {
                theoretical_bound(n, config.tau, config.t_end, &base)
            }
        };
        let c_front = config.chaos.c_front.unwrap_or_else(|| {
            let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
            let shapes: Vec<f64> = rows.iter().map(|r| shape(r.n)).collect();
            fit_front_factor(&errors, &shapes)
        });
        for r in rows {
            writeln!(csv, "{},{},{},{},{},{},{}", experiment, r.n, r.tau, phi, r.error, c_front * shape(r.n), c_front).unwrap();
        }
    }
    Ok(csv)
}

fn run_chaos(config: &ExperimentConfig, out: &Path, summary: &mut RunSummary) -> Result<()> {
    let setup = config.chaos_setup()?;
    let result = match config.experiment {
        ExperimentKind::ChaosWeak => coupled_sweep(&setup, Parts { weak: true, strong: false })?,
        ExperimentKind::ChaosStrong => coupled_sweep(&setup, Parts { weak: false, strong: true })?,
        _ => density_distance_experiment(&setup)?,
    };
    summary.monitor.merge(&result.monitor);
    summary.failures.extend(result.failures.iter().cloned());
    write_file(out, "results.csv", &results_csv(&result), summary)?;
    write_file(out, "rates.csv", &rates_csv(&result), summary)?;
    if config.experiment != ExperimentKind::DensityDistance {
        write_file(out, "bounds.csv", &bounds_csv(config, &result)?, summary)?;
    }
    let report = setup.regularized_kernel(config.tau)?.property_report();
    write_file(out, "kernel_report.json", &(serde_json::to_string_pretty(&report).expect("json") + "\n"), summary)
}

fn run_validate(config: &ExperimentConfig, out: &Path, summary: &mut RunSummary) -> Result<()> {
    let checks = validation_suite(config)?;
    let mut csv = String::from("check,passed,value,tolerance\n");
    for c in &checks {
        writeln!(csv, "{},{},{},{}", c.name, c.passed, c.value, c.tolerance).unwrap();
    }
    summary.validation = checks;
    write_file(out, "validation.csv", &csv, summary)
}
