use super::{FluxDrift, Recorder, SpdeConfig, SpdeSolution, Tridiagonal};
use crate::error::{invalid, Result};
use crate::grid::GridDensity;

/// Backward-Euler factors of `I - dt d_yy(a .)` with zero Dirichlet edges.
fn diffusion_factors(a: &[f64], ratio: f64) -> Tridiagonal {
    let n = a.len();
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 0..n {
        diag[i] = 1.0 + 2.0 * ratio * a[i];
        if i > 0 {
            lower[i] = -ratio * a[i - 1];
        }
        if i + 1 < n {
            upper[i] = -ratio * a[i + 1];
        }
    }
    Tridiagonal::factor(&lower, &diag, &upper)
}

/// Solves one path in the frame `y = x - nu W_t`.
///
/// `dw` holds the environmental increments; checkpoints carry the frame offset
/// `nu W_t`, so lab-frame values are read by shifting node positions.
pub fn solve_moving_frame(cfg: &SpdeConfig, initial: &GridDensity, dw: &[f64]) -> Result<SpdeSolution> {
    if dw.len() < cfg.n_steps {
        return Err(invalid(format!("need {} noise increments, got {}", cfg.n_steps, dw.len())));
    }
    if initial.frame_offset != 0.0 {
        return Err(invalid("initial density must be given in the lab frame"));
    }
    let grid = cfg.grid;
    let n = grid.n;
    let ratio = cfg.dt / (grid.dx * grid.dx);
    let half_var = |x: f64| 0.5 * cfg.sigma.eval(x).powi(2);

    let mut drift = FluxDrift::new(&cfg.interaction, grid, cfg.active_threshold)?;
    let mut rec = Recorder::new(cfg, initial)?;
    let constant = cfg.sigma.is_constant().then(|| diffusion_factors(&vec![half_var(0.0); n], ratio));
    let mut a = vec![0.0; n];

    let mut rho = initial.values.clone();
    let mut next = vec![0.0; n];
    let mut w = 0.0;
    for step in 0..cfg.n_steps {
        drift.update(&rho);
        if drift.active() {
            rec.check_courant(step, &drift)?;
        }
        rec.record_drift(cfg.nu * w, &drift);

        next.copy_from_slice(&rho);
        drift.add_divergence(&rho, &mut next, cfg.dt / grid.dx);

        w += dw[step];
        let offset = cfg.nu * w;
        match &constant {
            Some(f) => f.solve_in_place(&mut next),
            None => {
                for (i, ai) in a.iter_mut().enumerate() {
                    *ai = half_var(grid.x(i) + offset);
                }
                diffusion_factors(&a, ratio).solve_in_place(&mut next);
            }
        }
        std::mem::swap(&mut rho, &mut next);
        rec.after_step(step + 1, &mut rho, offset)?;
    }
    Ok(rec.finish())
}
