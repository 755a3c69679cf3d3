//! Per-path solvers for the stochastic Fokker-Planck equation
//!
//! ```text
//! d rho = d_xx((sigma^2 + nu^2)/2 rho) dt + d_x((k * rho) rho) dt - nu d_x rho dW
//! ```
//!
//! The primary scheme works in the frame `y = x - nu W_t`, where the transport
//! noise disappears and each path reduces to the parabolic problem
//! `d_t rho = d_yy(sigma^2(y + nu W_t)/2 rho) + d_y((k * rho) rho)`: conservative
//! explicit drift, then a backward-Euler diffusion solve. The direct scheme
//! discretizes the SPDE on the fixed lab grid and is kept as a cross-check.

mod direct;
mod moving;
pub mod sigma;
mod tridiag;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use direct::solve_direct_em;
pub use moving::solve_moving_frame;
pub use sigma::{c_gns, check_global_existence_condition, GlobalCondition, SigmaSpec};
pub use tridiag::Tridiagonal;

use crate::chaos::TestFunction;
use crate::error::{invalid, Error, Result};
pub use crate::grid::{Grid, GridDensity};
use crate::kernel::{ConvolutionTaps, Interaction};
use crate::noise::Rho0Spec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Frame,
    Direct,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame" => Ok(Scheme::Frame),
            "direct" => Ok(Scheme::Direct),
            _ => Err(invalid(format!("unknown scheme {s:?} (expected frame|direct)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Allowed `|mass - 1|` at any checkpoint.
    pub mass: f64,
    /// Allowed total mass removed by clipping negative values.
    pub clip: f64,
    /// Abort when the L2 norm exceeds this multiple of its initial value.
    pub growth: f64,
    /// Courant limit for the explicit drift.
    pub courant: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { mass: 1e-6, clip: 1e-8, growth: 10.0, courant: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct SpdeConfig {
    pub sigma: SigmaSpec,
    pub nu: f64,
    pub interaction: Interaction,
    pub grid: Grid,
    pub dt: f64,
    pub n_steps: usize,
    /// Step indices at which to store the density (0 stores the initial state).
    pub checkpoint_steps: Vec<usize>,
    pub tolerances: Tolerances,
    /// Keep `k * rho` at every step for a coupled mean-field run.
    pub record_drift: bool,
    /// Include the `(nu^2/2)(dW^2 - dt) rho_xx` term in the direct scheme.
    pub milstein_correction: bool,
    /// Density nodes below this fraction of the peak are skipped in the convolution.
    pub active_threshold: f64,
}

/// Converts `t_end / dt` to a step count, insisting on an integer ratio.
pub fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(invalid(format!("need dt > 0 and t_end > 0 (dt = {dt}, t_end = {t_end})")));
    }
    let ratio = t_end / dt;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * ratio.max(1.0) || n < 1.0 {
        return Err(invalid(format!("dt = {dt} must divide t_end = {t_end}")));
    }
    Ok(n as usize)
}

/// Step indices for checkpoint times; the final time is always included.
pub fn checkpoint_steps(times: &[f64], dt: f64, n_steps: usize) -> Result<Vec<usize>> {
    let mut set = BTreeSet::new();
    for &t in times {
        let s = if t == 0.0 { 0 } else { step_count(t, dt)? };
        if s > n_steps {
            return Err(invalid(format!("checkpoint t = {t} lies beyond the horizon")));
        }
        set.insert(s);
    }
    set.insert(n_steps);
    Ok(set.into_iter().collect())
}

impl SpdeConfig {
    pub fn new(sigma: SigmaSpec, nu: f64, interaction: Interaction, grid: Grid, dt: f64, t_end: f64) -> Result<Self> {
        sigma.validate()?;
        if !(nu >= 0.0) || !nu.is_finite() {
            return Err(invalid(format!("environmental noise amplitude must be >= 0, got {nu}")));
        }
        let n_steps = step_count(t_end, dt)?;
        Ok(Self {
            sigma,
            nu,
            interaction,
            grid,
            dt,
            n_steps,
            checkpoint_steps: vec![n_steps],
            tolerances: Tolerances::default(),
            record_drift: false,
            milstein_correction: true,
            active_threshold: 1e-15,
        })
    }

    pub fn with_checkpoints(mut self, times: &[f64]) -> Result<Self> {
        self.checkpoint_steps = checkpoint_steps(times, self.dt, self.n_steps)?;
        Ok(self)
    }

    pub fn every_step(mut self) -> Self {
        self.checkpoint_steps = (0..=self.n_steps).collect();
        self
    }

    pub fn t_end(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }
}

/// Truncated domain: initial support plus `6 sqrt(T (sup sigma^2 + nu^2)) + kernel reach`.
pub fn auto_grid(
    rho0: &Rho0Spec,
    sigma: &SigmaSpec,
    nu: f64,
    t_end: f64,
    interaction: &Interaction,
    dx: f64,
) -> Result<Grid> {
    let (lo, hi) = rho0.support_bounds();
    let margin = 6.0 * (t_end * (sigma.sup().powi(2) + nu * nu)).sqrt() + interaction.support_radius();
    // snap to multiples of dx so that x = 0 is a node
    let x0 = ((lo - margin) / dx).floor() * dx;
    let x1 = ((hi + margin) / dx).ceil() * dx;
    Grid::new(x0, dx, ((x1 - x0) / dx).round() as usize + 1)
}

/// Samples `rho0` on the grid and renormalizes to unit trapezoid mass.
pub fn project_initial(rho0: &Rho0Spec, grid: Grid) -> Result<GridDensity> {
    rho0.validate()?;
    let mut rho = GridDensity::from_fn(grid, |x| rho0.pdf(x));
    let (lo, hi) = rho0.support_bounds();
    if lo < grid.x0 || hi > grid.x_max() {
        return Err(Error::GridTooCoarse(format!(
            "grid [{}, {}] does not cover the initial support [{lo}, {hi}]",
            grid.x0,
            grid.x_max()
        )));
    }
    rho.normalize()?;
    Ok(rho)
}

pub fn mass(rho: &GridDensity) -> f64 {
    rho.mass()
}

pub fn l2_norm(rho: &GridDensity) -> f64 {
    rho.l2_norm()
}

/// `<rho, phi>` in the lab frame by the trapezoid rule.
pub fn pairing(rho: &GridDensity, phi: &TestFunction) -> Result<f64> {
    let (lo, hi) = phi.support();
    let left = rho.lab_x(0);
    let right = rho.lab_x(rho.values.len() - 1);
    if lo < left || hi > right {
        return Err(invalid(format!("test function support [{lo}, {hi}] exceeds the grid [{left}, {right}]")));
    }
    let n = rho.values.len();
    let mut acc = 0.0;
    for (i, v) in rho.values.iter().enumerate() {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        acc += w * v * phi.eval(rho.lab_x(i));
    }
    Ok(acc * rho.dx)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Monitor {
    pub steps: usize,
    pub max_mass_drift: f64,
    pub clipped_mass: f64,
    /// Most negative value seen before clipping.
    pub min_value: f64,
    pub initial_l2: f64,
    pub max_l2: f64,
    pub max_courant: f64,
}

impl Monitor {
    pub fn merge(&mut self, other: &Monitor) {
        self.steps += other.steps;
        self.max_mass_drift = self.max_mass_drift.max(other.max_mass_drift);
        self.clipped_mass = self.clipped_mass.max(other.clipped_mass);
        self.min_value = self.min_value.min(other.min_value);
        self.max_l2 = self.max_l2.max(other.max_l2);
        self.max_courant = self.max_courant.max(other.max_courant);
    }
}

/// `(k * rho_t)` on the solver grid at the start of every step.
#[derive(Debug, Clone)]
pub struct DriftHistory {
    pub grid: Grid,
    pub dt: f64,
    /// Frame offset `nu W_{t_n}` of step `n`.
    pub offsets: Vec<f64>,
    /// Convolution field at step `n`; empty when there is no interaction.
    pub fields: Vec<Vec<f64>>,
}

impl DriftHistory {
    pub fn n_steps(&self) -> usize {
        self.offsets.len()
    }

    /// `(k * rho_{t_n})(x)` at lab position `x`, or `None` off the grid.
    #[inline]
    pub fn convolution_at(&self, step: usize, x: f64) -> Option<f64> {
        let y = x - self.offsets[step];
        let field = &self.fields[step];
        if field.is_empty() {
            return if y >= self.grid.x0 && y <= self.grid.x_max() { Some(0.0) } else { None };
        }
        self.grid.interpolate(field, y)
    }
}

#[derive(Debug, Clone)]
pub struct SpdeSolution {
    pub checkpoints: Vec<GridDensity>,
    pub monitor: Monitor,
    pub drift: Option<DriftHistory>,
}

impl SpdeSolution {
    pub fn final_density(&self) -> &GridDensity {
        self.checkpoints.last().expect("solution always stores the final time")
    }

    pub fn at_time(&self, t: f64) -> Option<&GridDensity> {
        self.checkpoints.iter().find(|c| (c.time - t).abs() < 1e-9)
    }
}

// ---------------------------------------------------------------------------
// shared machinery

/// Convolution field and conservative drift flux.
pub(crate) struct FluxDrift {
    taps: Option<ConvolutionTaps>,
    pub(crate) field: Vec<f64>,
    threshold: f64,
}

impl FluxDrift {
    pub(crate) fn new(interaction: &Interaction, grid: Grid, threshold: f64) -> Result<Self> {
        let taps = if interaction.is_none() { None } else { Some(ConvolutionTaps::new(interaction, grid.dx)?) };
        Ok(Self { taps, field: vec![0.0; grid.n], threshold })
    }

    pub(crate) fn active(&self) -> bool {
        self.taps.is_some()
    }

    /// Recomputes `k * rho`, skipping density nodes below the active threshold.
    pub(crate) fn update(&mut self, rho: &[f64]) {
        let Some(taps) = &self.taps else { return };
        let peak = rho.iter().copied().fold(0.0, f64::max);
        let cut = peak * self.threshold;
        let lo = rho.iter().position(|v| *v > cut).unwrap_or(0);
        let hi = rho.iter().rposition(|v| *v > cut).map_or(rho.len(), |i| i + 1);
        taps.apply_ranges(rho, &mut self.field, lo..hi, 0..rho.len());
    }

    pub(crate) fn max_speed(&self) -> f64 {
        self.field.iter().map(|c| c.abs()).fold(0.0, f64::max)
    }

    /// `out_i += scale * (F_{i+1/2} - F_{i-1/2})`, `F = mean(c) * mean(rho)` on faces,
    /// with zero density beyond the grid.
    pub(crate) fn add_divergence(&self, rho: &[f64], out: &mut [f64], scale: f64) {
        if self.taps.is_none() {
            return;
        }
        let n = rho.len();
        let c = &self.field;
        let mut left = 0.25 * (c[0] + c[0]) * rho[0];
        for i in 0..n {
            let right = if i + 1 < n {
                0.25 * (c[i] + c[i + 1]) * (rho[i] + rho[i + 1])
            } else {
                0.25 * (c[i] + c[i]) * rho[i]
            };
            out[i] += scale * (right - left);
            left = right;
        }
    }
}

/// Clips negative values, restores the pre-clip mass, and returns
/// `(clipped_mass, min_value)`.
pub(crate) fn clip_negative(values: &mut [f64], dx: f64) -> (f64, f64) {
    let mut min = 0.0f64;
    let mut removed = 0.0;
    for v in values.iter() {
        if *v < 0.0 {
            min = min.min(*v);
            removed -= *v;
        }
    }
    if removed == 0.0 {
        return (0.0, min);
    }
    let before: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v = v.max(0.0));
    let after: f64 = values.iter().sum();
    if after > 0.0 {
        let s = before / after;
        values.iter_mut().for_each(|v| *v *= s);
    }
    (removed * dx, min)
}

/// Shared per-step bookkeeping for both schemes.
pub(crate) struct Recorder<'a> {
    cfg: &'a SpdeConfig,
    initial_mass: f64,
    pub(crate) monitor: Monitor,
    checkpoints: Vec<GridDensity>,
    next_checkpoint: usize,
    pub(crate) history: Option<DriftHistory>,
}

impl<'a> Recorder<'a> {
    pub(crate) fn new(cfg: &'a SpdeConfig, initial: &GridDensity) -> Result<Self> {
        if initial.values.len() != cfg.grid.n || (initial.dx - cfg.grid.dx).abs() > 1e-15 * cfg.grid.dx {
            return Err(invalid("initial density does not live on the solver grid"));
        }
        if initial.values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(invalid("initial density must be finite and nonnegative"));
        }
        let l2 = initial.l2_norm();
        let mut rec = Self {
            cfg,
            initial_mass: initial.mass(),
            monitor: Monitor { initial_l2: l2, max_l2: l2, ..Monitor::default() },
            checkpoints: Vec::with_capacity(cfg.checkpoint_steps.len()),
            next_checkpoint: 0,
            history: cfg.record_drift.then(|| DriftHistory {
                grid: cfg.grid,
                dt: cfg.dt,
                offsets: Vec::with_capacity(cfg.n_steps),
                fields: Vec::with_capacity(cfg.n_steps),
            }),
        };
        rec.observe(0, &initial.values, 0.0)?;
        Ok(rec)
    }

    pub(crate) fn record_drift(&mut self, offset: f64, drift: &FluxDrift) {
        if let Some(h) = &mut self.history {
            h.offsets.push(offset);
            h.fields.push(if drift.active() { drift.field.clone() } else { Vec::new() });
        }
    }

    pub(crate) fn check_courant(&mut self, step: usize, drift: &FluxDrift) -> Result<()> {
        let courant = self.cfg.dt * drift.max_speed() / self.cfg.grid.dx;
        self.monitor.max_courant = self.monitor.max_courant.max(courant);
        if courant > self.cfg.tolerances.courant {
            return Err(Error::Cfl { step, courant, limit: self.cfg.tolerances.courant });
        }
        Ok(())
    }

    /// Post-step: clip, monitor, and store a checkpoint when due.
    pub(crate) fn after_step(&mut self, step: usize, values: &mut [f64], offset: f64) -> Result<()> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step, index });
        }
        let (clipped, min) = clip_negative(values, self.cfg.grid.dx);
        self.monitor.clipped_mass += clipped;
        self.monitor.min_value = self.monitor.min_value.min(min);
        let time = step as f64 * self.cfg.dt;
        if self.monitor.clipped_mass > self.cfg.tolerances.clip {
            return Err(Error::NegativeDensity { time, clipped: self.monitor.clipped_mass, tol: self.cfg.tolerances.clip });
        }
        self.monitor.steps = step;
        self.observe(step, values, offset)
    }

    fn observe(&mut self, step: usize, values: &[f64], offset: f64) -> Result<()> {
        let due = self.cfg.checkpoint_steps.get(self.next_checkpoint) == Some(&step);
        let check_norms = due || step.is_multiple_of(16) || step == self.cfg.n_steps;
        if !check_norms {
            return Ok(());
        }
        let density = GridDensity {
            x0: self.cfg.grid.x0,
            dx: self.cfg.grid.dx,
            values: values.to_vec(),
            time: step as f64 * self.cfg.dt,
            frame_offset: offset,
        };
        let l2 = density.l2_norm();
        self.monitor.max_l2 = self.monitor.max_l2.max(l2);
        if l2 > self.cfg.tolerances.growth * self.monitor.initial_l2 {
            return Err(Error::Instability { step, norm: l2, initial: self.monitor.initial_l2 });
        }
        let drift = (density.mass() - self.initial_mass).abs();
        self.monitor.max_mass_drift = self.monitor.max_mass_drift.max(drift);
        if due {
            if drift > self.cfg.tolerances.mass {
                return Err(Error::MassLeak { time: density.time, drift, tol: self.cfg.tolerances.mass });
            }
            self.checkpoints.push(density);
            self.next_checkpoint += 1;
        }
        Ok(())
    }

    pub(crate) fn finish(self) -> SpdeSolution {
        SpdeSolution { checkpoints: self.checkpoints, monitor: self.monitor, drift: self.history }
    }
}

/// Solves with the configured scheme.
pub fn solve(cfg: &SpdeConfig, scheme: Scheme, initial: &GridDensity, dw: &[f64]) -> Result<SpdeSolution> {
    match scheme {
        Scheme::Frame => solve_moving_frame(cfg, initial, dw),
        Scheme::Direct => solve_direct_em(cfg, initial, dw),
    }
}

#[cfg(test)]
mod tests;
