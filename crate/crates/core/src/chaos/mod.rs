//! Propagation-of-chaos experiments: weak pairing error, strong coupling
//! error, distance between regularized and exact densities, bound curves and
//! rate fits.
//!
//! Every replica `m` draws its own bundle from `(seed, m)`, so the expectation is
//! over `W`, `B` and the initial opinions jointly. With `fix_w` all replicas
//! share one environmental path instead, which estimates the conditional error
//! given `W`; those rows carry a `-fixw` suffix.

mod rates;
mod test_function;

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

pub use rates::{coupling_bound, fit_front_factor, fit_rate, mean_stderr, theoretical_bound, BoundConstants, RateFit};
pub use test_function::{empirical_pairing, TestFamily, TestFunction};

use crate::error::{invalid, Result};
use crate::grid::{Grid, GridDensity};
use crate::kernel::{Interaction, KernelSpec, RegularizedKernel};
use crate::meanfield::simulate_meanfield;
use crate::noise::{environment_increments, NoiseBundle, Rho0Spec, StreamKey};
use crate::particles::{simulate, SimConfig};
use crate::spde::{auto_grid, pairing, project_initial, solve_moving_frame, step_count, Monitor, SigmaSpec, SpdeConfig};

/// Replica id whose environmental stream is shared in `fix_w` mode.
pub const FIXED_W_REPLICA: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    /// Regularized particles against the exact (weak) or regularized (strong) density.
    Standard,
    /// No interaction on either side.
    None,
}

#[derive(Debug, Clone)]
pub struct ChaosSetup {
    pub seed: u64,
    pub radius: f64,
    pub tau: f64,
    pub sigma: SigmaSpec,
    pub nu: f64,
    pub t_end: f64,
    pub dt: f64,
    pub rho0: Rho0Spec,
    pub sizes: Vec<usize>,
    pub replicas: usize,
    /// Times at which errors are recorded; the horizon is always included.
    pub checkpoints: Vec<f64>,
    pub dx: f64,
    pub phis: Vec<TestFunction>,
    pub kernel: KernelMode,
    /// Also run the interaction-free control in the weak experiment.
    pub control: bool,
    pub fix_w: bool,
    /// Regularization widths of the density-distance study.
    pub taus: Vec<f64>,
}

impl Default for ChaosSetup {
    fn default() -> Self {
        Self {
            seed: 42,
            radius: 1.0,
            tau: 0.5,
            sigma: SigmaSpec::Constant(1.0),
            nu: 0.25,
            t_end: 0.5,
            dt: 1e-3,
            rho0: Rho0Spec::two_cluster(1.0, 0.1),
            sizes: vec![50, 100, 200, 400],
            replicas: 200,
            checkpoints: vec![0.5],
            dx: 0.02,
            phis: TestFunction::builtin().to_vec(),
            kernel: KernelMode::Standard,
            control: true,
            fix_w: false,
            taus: vec![0.2, 0.1, 0.05],
        }
    }
}

impl ChaosSetup {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(invalid("chaos sweep needs a non-empty list of positive particle counts"));
        }
        if self.replicas == 0 {
            return Err(invalid("chaos sweep needs at least one replica"));
        }
        if !(self.tau > 0.0) || !(self.radius > 0.0) || !(self.dx > 0.0) {
            return Err(invalid("chaos sweep needs positive tau, radius and dx"));
        }
        if self.taus.iter().any(|t| !(*t > 0.0)) {
            return Err(invalid("regularization widths must be positive"));
        }
        self.sigma.validate()?;
        self.rho0.validate()?;
        step_count(self.t_end, self.dt)?;
        Ok(())
    }

    fn n_steps(&self) -> usize {
        step_count(self.t_end, self.dt).expect("validated")
    }

    fn checkpoint_steps(&self) -> Result<Vec<usize>> {
        crate::spde::checkpoint_steps(&self.checkpoints, self.dt, self.n_steps())
    }

    fn suffix(&self) -> &'static str {
        if self.fix_w {
            "-fixw"
        } else {
            ""
        }
    }

    /// The replica's bundle with `n` particles.
    pub fn bundle(&self, replica: u64, n: usize) -> Result<NoiseBundle> {
        let n_steps = self.n_steps();
        let b = NoiseBundle::generate_replica(StreamKey::new(self.seed, replica), n, n_steps, self.dt, &self.rho0)?;
        if self.fix_w {
            b.with_environment(environment_increments(StreamKey::new(self.seed, FIXED_W_REPLICA), n_steps, self.dt))
        } else {
            Ok(b)
        }
    }

    pub fn regularized_kernel(&self, tau: f64) -> Result<Arc<RegularizedKernel>> {
        Ok(Arc::new(RegularizedKernel::build(self.radius, tau, self.dx.min(tau / 8.0))?))
    }

    /// Solver grid wide enough for every interaction in the study.
    pub fn grid(&self, dx: f64, reach: f64) -> Result<Grid> {
        let widest = Interaction::Exact(KernelSpec::new(reach)?);
        auto_grid(&self.rho0, &self.sigma, self.nu, self.t_end, &widest, dx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChaosRow {
    pub experiment: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub tau: f64,
    pub t: f64,
    pub phi: String,
    pub error: f64,
    pub stderr: f64,
    pub replicas: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub experiment: String,
    pub tau: f64,
    pub phi: String,
    pub slope: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaFailure {
    pub replica: u64,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ChaosResult {
    pub rows: Vec<ChaosRow>,
    pub rates: Vec<RateRow>,
    pub monitor: Monitor,
    pub failures: Vec<ReplicaFailure>,
}

impl ChaosResult {
    pub fn extend(&mut self, other: ChaosResult) {
        self.rows.extend(other.rows);
        self.rates.extend(other.rates);
        self.monitor.merge(&other.monitor);
        self.failures.extend(other.failures);
    }

    pub fn rows_for<'a>(&'a self, experiment: &'a str) -> impl Iterator<Item = &'a ChaosRow> + 'a {
        self.rows.iter().filter(move |r| r.experiment == experiment)
    }

    pub fn rate(&self, experiment: &str, phi: &str) -> Option<&RateRow> {
        self.rates.iter().find(|r| r.experiment == experiment && r.phi == phi)
    }
}

/// Runs `f` for every replica in parallel and returns outcomes in id order.
fn per_replica<T: Send>(
    replicas: usize,
    f: impl Fn(u64) -> Result<T> + Sync,
) -> (Vec<T>, Vec<ReplicaFailure>) {
    let outcomes: Vec<(u64, Result<T>)> = (0..replicas as u64).into_par_iter().map(|m| (m, f(m))).collect();
    let mut ok = Vec::with_capacity(replicas);
    let mut failures = Vec::new();
    for (replica, outcome) in outcomes {
        match outcome {
            Ok(v) => ok.push(v),
            Err(e) => failures.push(ReplicaFailure { replica, kind: e.kind().into(), message: e.to_string() }),
        }
    }
    (ok, failures)
}

// ---------------------------------------------------------------------------
// coupled weak + strong sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Parts {
    pub weak: bool,
    pub strong: bool,
}

struct SweepReplica {
    /// `[size][checkpoint][phi]` squared pairing gaps.
    weak: Vec<f64>,
    control: Vec<f64>,
    /// Per size, `[checkpoint][particle]` squared position gaps.
    strong: Vec<Vec<f64>>,
    monitor: Monitor,
}

struct SweepContext {
    grid: Grid,
    steps: Vec<usize>,
    times: Vec<f64>,
    exact: Interaction,
    regularized: Interaction,
    n_max: usize,
}

fn density_pairings(densities: &[GridDensity], phis: &[TestFunction]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(densities.len() * phis.len());
    for rho in densities {
        for phi in phis {
            out.push(pairing(rho, phi)?);
        }
    }
    Ok(out)
}

fn sweep_replica(setup: &ChaosSetup, ctx: &SweepContext, parts: Parts, m: u64) -> Result<SweepReplica> {
    let bundle = setup.bundle(m, ctx.n_max)?;
    let rho0 = project_initial(&setup.rho0, ctx.grid)?;
    let solve = |interaction: &Interaction, record: bool| {
        let mut cfg = SpdeConfig::new(setup.sigma, setup.nu, interaction.clone(), ctx.grid, setup.dt, setup.t_end)?;
        cfg.checkpoint_steps = ctx.steps.clone();
        cfg.record_drift = record;
        solve_moving_frame(&cfg, &rho0, &bundle.w)
    };
    let sim_config = |n: usize, interaction: &Interaction| {
        let mut cfg = SimConfig::new(n, setup.t_end, setup.dt, setup.sigma, setup.nu, interaction.clone())?;
        cfg.checkpoint_steps = ctx.steps.clone();
        Ok::<_, crate::Error>(cfg)
    };
    let (particle_kernel, weak_density, strong_density) = match setup.kernel {
        KernelMode::Standard => (&ctx.regularized, &ctx.exact, &ctx.regularized),
        KernelMode::None => (&Interaction::None, &Interaction::None, &Interaction::None),
    };
    let mut monitor = Monitor::default();
    let n_phi = setup.phis.len();

    let weak_reference = if parts.weak {
        let sol = solve(weak_density, false)?;
        monitor.merge(&sol.monitor);
        Some(density_pairings(&sol.checkpoints, &setup.phis)?)
    } else {
        None
    };
    let control_reference = if parts.weak && setup.control && setup.kernel == KernelMode::Standard {
        let sol = solve(&Interaction::None, false)?;
        monitor.merge(&sol.monitor);
        Some(density_pairings(&sol.checkpoints, &setup.phis)?)
    } else {
        None
    };
    let mean_field = if parts.strong {
        let sol = solve(strong_density, true)?;
        monitor.merge(&sol.monitor);
        let history = sol.drift.expect("drift recorded");
        let cfg = sim_config(ctx.n_max, strong_density)?;
        Some(simulate_meanfield(&cfg, &history, &bundle, &strong_density.label())?)
    } else {
        None
    };

    let mut weak = Vec::new();
    let mut control = Vec::new();
    let mut strong = Vec::new();
    for &n in &setup.sizes {
        let sub = bundle.truncated(n);
        let xs = simulate(&sim_config(n, particle_kernel)?, &sub)?;
        if let Some(reference) = &weak_reference {
            for (c, x) in xs.iter().enumerate() {
                for (p, phi) in setup.phis.iter().enumerate() {
                    let gap = empirical_pairing(&x.positions, phi) - reference[c * n_phi + p];
                    weak.push(gap * gap);
                }
            }
        }
        if let Some(reference) = &control_reference {
            let free = simulate(&sim_config(n, &Interaction::None)?, &sub)?;
            for (c, x) in free.iter().enumerate() {
                for (p, phi) in setup.phis.iter().enumerate() {
                    let gap = empirical_pairing(&x.positions, phi) - reference[c * n_phi + p];
                    control.push(gap * gap);
                }
            }
        }
        if let Some(mf) = &mean_field {
            let mut gaps = Vec::with_capacity(xs.len() * n);
            for (x, y) in xs.iter().zip(&mf.checkpoints) {
                gaps.extend(x.positions.iter().zip(&y.positions[..n]).map(|(a, b)| (a - b) * (a - b)));
            }
            strong.push(gaps);
        }
    }
    Ok(SweepReplica { weak, control, strong, monitor })
}

/// Running sums per cell, merged in replica order.
#[derive(Clone)]
struct Moments {
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self { sum: vec![0.0; len], sq: vec![0.0; len] }
    }

    fn add(&mut self, values: &[f64]) {
        for ((s, q), v) in self.sum.iter_mut().zip(self.sq.iter_mut()).zip(values) {
            *s += v;
            *q += v * v;
        }
    }

    fn mean_stderr(&self, i: usize, m: usize) -> (f64, f64) {
        let mf = m as f64;
        let mean = self.sum[i] / mf;
        if m < 2 {
            return (mean, f64::NAN);
        }
        let var = ((self.sq[i] - mf * mean * mean) / (mf - 1.0)).max(0.0);
        (mean, (var / mf).sqrt())
    }
}

/// One pass over replicas that feeds the weak and the strong experiments
/// from the same bundles.
pub fn coupled_sweep(setup: &ChaosSetup, parts: Parts) -> Result<ChaosResult> {
    setup.validate()?;
    let reg = setup.regularized_kernel(setup.tau)?;
    let steps = setup.checkpoint_steps()?;
    let ctx = SweepContext {
        grid: setup.grid(setup.dx, reg.support_radius())?,
        times: steps.iter().map(|s| *s as f64 * setup.dt).collect(),
        steps,
        exact: Interaction::Exact(KernelSpec::new(setup.radius)?),
        regularized: Interaction::Regularized(reg),
        n_max: *setup.sizes.iter().max().expect("validated"),
    };
    let (replicas, failures) = per_replica(setup.replicas, |m| sweep_replica(setup, &ctx, parts, m));
    let mut result = ChaosResult { failures, ..ChaosResult::default() };
    let m = replicas.len();
    if m == 0 {
        return Err(invalid(format!(
            "every replica failed; first failure: {}",
            result.failures.first().map_or("none", |f| f.message.as_str())
        )));
    }
    for r in &replicas {
        result.monitor.merge(&r.monitor);
    }
    let n_cp = ctx.times.len();
    let n_phi = setup.phis.len();
    let sfx = setup.suffix();
    let tau_label = match setup.kernel {
        KernelMode::Standard => setup.tau,
        KernelMode::None => 0.0,
    };

    let mut weak_block = |name: String, pick: &dyn Fn(&SweepReplica) -> &[f64], tau: f64| {
        let mut acc = Moments::new(setup.sizes.len() * n_cp * n_phi);
        replicas.iter().for_each(|r| acc.add(pick(r)));
        for (s, &n) in setup.sizes.iter().enumerate() {
            for (c, &t) in ctx.times.iter().enumerate() {
                for (p, phi) in setup.phis.iter().enumerate() {
                    let (error, stderr) = acc.mean_stderr((s * n_cp + c) * n_phi + p, m);
                    result.rows.push(ChaosRow { experiment: name.clone(), n, tau, t, phi: phi.id(), error, stderr, replicas: m });
                }
            }
        }
        for phi in &setup.phis {
            let final_errors: Vec<f64> = result
                .rows
                .iter()
                .filter(|r| r.experiment == name && r.phi == phi.id() && r.t == *ctx.times.last().unwrap())
                .map(|r| r.error)
                .collect();
            let sizes: Vec<f64> = setup.sizes.iter().map(|n| *n as f64).collect();
            if let Ok(fit) = fit_rate(&sizes, &final_errors) {
                result.rates.push(RateRow { experiment: name.clone(), tau, phi: phi.id(), slope: fit.slope, r2: fit.r2 });
            }
        }
    };
    if parts.weak {
        let name = match setup.kernel {
            KernelMode::Standard => "chaos-weak",
            KernelMode::None => "chaos-weak-control",
        };
        weak_block(format!("{name}{sfx}"), &|r| &r.weak, tau_label);
        if setup.control && setup.kernel == KernelMode::Standard {
            weak_block(format!("chaos-weak-control{sfx}"), &|r| &r.control, 0.0);
        }
    }
    if parts.strong {
        let name = format!("chaos-strong{sfx}");
        let mut sup_over_time = Vec::with_capacity(setup.sizes.len());
        for (s, &n) in setup.sizes.iter().enumerate() {
            let mut acc = Moments::new(n_cp * n);
            replicas.iter().for_each(|r| acc.add(&r.strong[s]));
            let mut best = 0.0f64;
            for (c, &t) in ctx.times.iter().enumerate() {
                let (error, stderr) = (0..n)
                    .map(|i| acc.mean_stderr(c * n + i, m))
                    .fold((f64::NEG_INFINITY, f64::NAN), |a, b| if b.0 > a.0 { b } else { a });
                best = best.max(error);
                result.rows.push(ChaosRow { experiment: name.clone(), n, tau: tau_label, t, phi: "sup_i".into(), error, stderr, replicas: m });
            }
            sup_over_time.push(best);
        }
        let shifted: Vec<f64> = setup.sizes.iter().map(|n| (*n as f64 - 1.0).max(0.0)).collect();
        if let Ok(fit) = fit_rate(&shifted, &sup_over_time) {
            result.rates.push(RateRow { experiment: name, tau: tau_label, phi: "sup_i".into(), slope: fit.slope, r2: fit.r2 });
        }
    }
    Ok(result)
}

pub fn weak_error_experiment(setup: &ChaosSetup) -> Result<ChaosResult> {
    coupled_sweep(setup, Parts { weak: true, strong: false })
}

pub fn strong_coupling_experiment(setup: &ChaosSetup) -> Result<ChaosResult> {
    coupled_sweep(setup, Parts { weak: false, strong: true })
}

// ---------------------------------------------------------------------------
// density distance

/// Per-path `sup_t ||rho_tau - rho||_{L2}` for each width in `setup.taus`,
/// all densities solved on the same `W` and grid.
pub fn density_distances(setup: &ChaosSetup, replica: u64, dx: f64, replace_with_exact: bool) -> Result<(Vec<f64>, Monitor)> {
    let widest = setup.taus.iter().copied().fold(0.0, f64::max);
    let grid = setup.grid(dx, setup.radius + 2.0 * widest)?;
    let steps = setup.checkpoint_steps()?;
    let w = setup.bundle(replica, 1)?.w;
    let rho0 = project_initial(&setup.rho0, grid)?;
    let solve = |interaction: Interaction| {
        let mut cfg = SpdeConfig::new(setup.sigma, setup.nu, interaction, grid, setup.dt, setup.t_end)?;
        cfg.checkpoint_steps = steps.clone();
        solve_moving_frame(&cfg, &rho0, &w)
    };
    let exact = Interaction::Exact(KernelSpec::new(setup.radius)?);
    let reference = solve(exact.clone())?;
    let mut monitor = reference.monitor;
    let mut out = Vec::with_capacity(setup.taus.len());
    for &tau in &setup.taus {
        let interaction = if replace_with_exact {
            exact.clone()
        } else {
            Interaction::Regularized(Arc::new(RegularizedKernel::build(setup.radius, tau, dx.min(tau / 8.0))?))
        };
        let sol = solve(interaction)?;
        monitor.merge(&sol.monitor);
        let d = sol
            .checkpoints
            .iter()
            .zip(&reference.checkpoints)
            .map(|(a, b)| a.l2_distance(b))
            .fold(0.0, f64::max);
        out.push(d);
    }
    Ok((out, monitor))
}

/// Max and mean over sampled paths of `sup_t ||rho_tau_t - rho_t||`. The max
/// over paths is a lower estimate of the essential supremum.
pub fn density_distance_experiment(setup: &ChaosSetup) -> Result<ChaosResult> {
    setup.validate()?;
    if setup.taus.is_empty() {
        return Err(invalid("density-distance study needs at least one tau"));
    }
    let dx = setup.taus.iter().fold(setup.dx, |d, t| d.min(t / 8.0));
    let (paths, failures) = per_replica(setup.replicas, |m| density_distances(setup, m, dx, false));
    let m = paths.len();
    if m == 0 {
        return Err(invalid("every density-distance replica failed"));
    }
    let mut result = ChaosResult { failures, ..ChaosResult::default() };
    let name = format!("density-distance{}", setup.suffix());
    let mut maxima = Vec::new();
    for (k, &tau) in setup.taus.iter().enumerate() {
        let values: Vec<f64> = paths.iter().map(|(d, _)| d[k]).collect();
        let (mean, stderr) = mean_stderr(&values);
        let max = values.iter().copied().fold(0.0, f64::max);
        maxima.push(max);
        let row = |phi: &str, error: f64, stderr: f64| ChaosRow {
            experiment: name.clone(),
            n: 0,
            tau,
            t: setup.t_end,
            phi: phi.into(),
            error,
            stderr,
            replicas: m,
        };
        result.rows.push(row("max_path", max, f64::NAN));
        result.rows.push(row("mean_path", mean, stderr));
    }
    for (_, mon) in &paths {
        result.monitor.merge(mon);
    }
    if let Ok(fit) = fit_rate(&setup.taus, &maxima) {
        result.rates.push(RateRow { experiment: name, tau: f64::NAN, phi: "max_path".into(), slope: fit.slope, r2: fit.r2 });
    }
    Ok(result)
}

#[cfg(test)]
mod tests;
