use super::{FluxDrift, Recorder, SpdeConfig, SpdeSolution};
use crate::error::{invalid, Result};
use crate::grid::GridDensity;

/// Euler-Maruyama (optionally Milstein) for the SPDE on the fixed lab grid.
///
/// Explicit in everything, so it requires `dt <= dx^2 / (4 (sup sigma^2 + nu^2))`.
pub fn solve_direct_em(cfg: &SpdeConfig, initial: &GridDensity, dw: &[f64]) -> Result<SpdeSolution> {
    if dw.len() < cfg.n_steps {
        return Err(invalid(format!("need {} noise increments, got {}", cfg.n_steps, dw.len())));
    }
    let grid = cfg.grid;
    let dx = grid.dx;
    let limit = 0.25 * dx * dx / (cfg.sigma.sup().powi(2) + cfg.nu * cfg.nu);
    if cfg.dt > limit {
        return Err(invalid(format!("direct scheme needs dt <= {limit:.3e} on this grid, got {}", cfg.dt)));
    }
    let n = grid.n;
    let a: Vec<f64> = (0..n).map(|i| 0.5 * (cfg.sigma.eval(grid.x(i)).powi(2) + cfg.nu * cfg.nu)).collect();
    let at = |v: &[f64], i: isize| if i < 0 || i as usize >= n { 0.0 } else { v[i as usize] };

    let mut drift = FluxDrift::new(&cfg.interaction, grid, cfg.active_threshold)?;
    let mut rec = Recorder::new(cfg, initial)?;
    let mut rho = initial.values.clone();
    let mut flux = vec![0.0; n];
    let mut ar = vec![0.0; n];
    for step in 0..cfg.n_steps {
        drift.update(&rho);
        if drift.active() {
            rec.check_courant(step, &drift)?;
        }
        rec.record_drift(0.0, &drift);

        flux.iter_mut().for_each(|f| *f = 0.0);
        drift.add_divergence(&rho, &mut flux, cfg.dt / dx);
        for i in 0..n {
            ar[i] = a[i] * rho[i];
        }
        let db = dw[step];
        let transport = cfg.nu * db / (2.0 * dx);
        let correction = if cfg.milstein_correction { 0.5 * cfg.nu * cfg.nu * (db * db - cfg.dt) / (dx * dx) } else { 0.0 };
        let diffusion = cfg.dt / (dx * dx);
        let mut next = vec![0.0; n];
        for i in 0..n {
            let k = i as isize;
            let (l, c, r) = (at(&rho, k - 1), rho[i], at(&rho, k + 1));
            let lap_a = at(&ar, k - 1) - 2.0 * ar[i] + at(&ar, k + 1);
            next[i] = c + diffusion * lap_a + flux[i] - transport * (r - l) + correction * (l - 2.0 * c + r);
        }
        rho = next;
        rec.after_step(step + 1, &mut rho, 0.0)?;
    }
    Ok(rec.finish())
}
