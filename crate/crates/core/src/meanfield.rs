//! Mean-field copies `dY^i = -(k * rho_t)(Y^i) dt + sigma(Y^i) dB^i + nu dW`,
//! with `rho` the density solved on the same environmental path.

use crate::error::{invalid, Error, Result};
use crate::noise::NoiseBundle;
use crate::particles::{check_bundle, ParticleEnsemble, SimConfig};
use crate::spde::DriftHistory;

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldTrajectory {
    pub checkpoints: Vec<ParticleEnsemble>,
    /// Interaction label of the density that drove the copies.
    pub kernel: String,
}

/// Advances `config.n` copies from the bundle's initial opinions, reading the
/// drift field of step `n` from `history` (frozen over the step).
///
/// The interaction in `config` is ignored; the density decides it. `kernel`
/// only labels the output.
pub fn simulate_meanfield(
    config: &SimConfig,
    history: &DriftHistory,
    bundle: &NoiseBundle,
    kernel: &str,
) -> Result<MeanFieldTrajectory> {
    check_bundle(config.n, config.n_steps, config.dt, bundle)?;
    if history.n_steps() < config.n_steps || (history.dt - config.dt).abs() > 1e-12 * config.dt {
        return Err(invalid(format!(
            "drift history has {} steps of {}, need {} steps of {}",
            history.n_steps(),
            history.dt,
            config.n_steps,
            config.dt
        )));
    }
    let mut y = bundle.initial.clone();
    let mut checkpoints = Vec::with_capacity(config.checkpoint_steps.len());
    let mut next = 0;
    if config.checkpoint_steps.first() == Some(&0) {
        checkpoints.push(ParticleEnsemble::new(y.clone(), 0.0)?);
        next = 1;
    }
    let constant = config.sigma.is_constant().then(|| config.sigma.eval(0.0));
    for step in 0..config.n_steps {
        let db = bundle.b_step(step);
        let shift = config.nu * bundle.w[step];
        for (i, yi) in y.iter_mut().enumerate() {
            let c = history
                .convolution_at(step, *yi)
                .ok_or(Error::OutOfGrid { step, position: *yi })?;
            let s = constant.unwrap_or_else(|| config.sigma.eval(*yi));
            *yi += -c * config.dt + s * db[i] + shift;
            if !yi.is_finite() {
                return Err(Error::NonFinite { step, index: i });
            }
        }
        if config.checkpoint_steps.get(next) == Some(&(step + 1)) {
            checkpoints.push(ParticleEnsemble::new(y.clone(), (step + 1) as f64 * config.dt)?);
            next += 1;
        }
    }
    Ok(MeanFieldTrajectory { checkpoints, kernel: kernel.to_string() })
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at level `alpha`.
pub fn ks_critical(alpha: f64, na: usize, nb: usize) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    c * ((na + nb) as f64 / (na * nb) as f64).sqrt()
}
