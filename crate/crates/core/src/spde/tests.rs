use super::*;
use crate::kernel::KernelSpec;
use crate::noise::{environment_increments, StreamKey};
use crate::quadrature::{composite_gl, trapezoid};

fn gaussian(mean: f64, var: f64) -> impl Fn(f64) -> f64 {
    move |x| (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Grid L2 distance between a (possibly moving) density and `f` in the lab frame.
fn lab_error(rho: &GridDensity, f: impl Fn(f64) -> f64) -> f64 {
    let sq: Vec<f64> = (0..rho.values.len()).map(|i| (rho.values[i] - f(rho.lab_x(i))).powi(2)).collect();
    trapezoid(&sq, rho.dx).sqrt()
}

fn heat_setup(dx: f64, dt: f64, nu: f64, t_end: f64) -> (SpdeConfig, GridDensity) {
    let grid = Grid::covering(-6.0, 6.0, dx).unwrap();
    let cfg = SpdeConfig::new(SigmaSpec::Constant(1.0), nu, Interaction::None, grid, dt, t_end).unwrap();
    let rho0 = project_initial(&Rho0Spec::gaussian(0.0, 0.5), grid).unwrap();
    (cfg, rho0)
}

#[test]
fn heat_equation_matches_closed_form() {
    let (cfg, rho0) = heat_setup(0.02, 1e-3, 0.0, 0.5);
    let sol = solve_moving_frame(&cfg, &rho0, &vec![0.0; cfg.n_steps]).unwrap();
    let err = lab_error(sol.final_density(), gaussian(0.0, 0.75));
    assert!(err < 2e-3, "{err}");
    assert!((sol.final_density().time - 0.5).abs() < 1e-12);
}

#[test]
fn discretization_error_shrinks_under_refinement() {
    let err = |dx: f64, dt: f64| {
        let (cfg, rho0) = heat_setup(dx, dt, 0.0, 0.2);
        let sol = solve_moving_frame(&cfg, &rho0, &vec![0.0; cfg.n_steps]).unwrap();
        lab_error(sol.final_density(), gaussian(0.0, 0.45))
    };
    let coarse = err(0.04, 4e-3);
    let fine = err(0.04 / 2f64.sqrt(), 2e-3);
    assert!(coarse / fine >= 1.5, "{coarse} / {fine}");
}

#[test]
fn common_noise_only_translates_the_frame() {
    let (calm, rho0) = heat_setup(0.02, 1e-3, 0.0, 0.2);
    let (noisy, _) = heat_setup(0.02, 1e-3, 0.5, 0.2);
    let dw = environment_increments(StreamKey::new(3, 0), calm.n_steps, calm.dt);
    let a = solve_moving_frame(&calm, &rho0, &dw).unwrap();
    let b = solve_moving_frame(&noisy, &rho0, &dw).unwrap();
    let w: f64 = dw.iter().sum();
    assert_eq!(a.final_density().values, b.final_density().values);
    assert!((b.final_density().frame_offset - 0.5 * w).abs() < 1e-12);
    let err = lab_error(b.final_density(), gaussian(0.5 * w, 0.45));
    assert!(err < 2e-3, "{err}");
}

#[test]
fn mass_is_conserved_with_interaction() {
    let grid = Grid::covering(-5.0, 5.0, 0.02).unwrap();
    let kernel = Interaction::Exact(KernelSpec::new(1.0).unwrap());
    let cfg = SpdeConfig::new(SigmaSpec::Constant(0.7), 0.25, kernel, grid, 1e-3, 0.3)
        .unwrap()
        .with_checkpoints(&[0.0, 0.1, 0.2])
        .unwrap();
    let rho0 = project_initial(&Rho0Spec::two_cluster(1.0, 0.1), grid).unwrap();
    let dw = environment_increments(StreamKey::new(1, 0), cfg.n_steps, cfg.dt);
    let sol = solve_moving_frame(&cfg, &rho0, &dw).unwrap();
    assert_eq!(sol.checkpoints.len(), 4);
    for c in &sol.checkpoints {
        assert!((c.mass() - 1.0).abs() < 1e-9);
        assert!(c.min_value() >= 0.0);
    }
    assert!(sol.monitor.max_mass_drift < 1e-9);
}

#[test]
fn interaction_contracts_the_density() {
    // the exact force pulls two nearby clusters together: variance drops below pure diffusion
    let grid = Grid::covering(-5.0, 5.0, 0.02).unwrap();
    let rho0 = project_initial(&Rho0Spec::two_cluster(0.5, 0.1), grid).unwrap();
    let var = |rho: &GridDensity| {
        let w: Vec<f64> = (0..rho.values.len()).map(|i| rho.values[i] * rho.lab_x(i).powi(2)).collect();
        trapezoid(&w, rho.dx)
    };
    let run = |interaction: Interaction| {
        let cfg = SpdeConfig::new(SigmaSpec::Constant(0.3), 0.0, interaction, grid, 1e-3, 0.5).unwrap();
        var(solve_moving_frame(&cfg, &rho0, &vec![0.0; cfg.n_steps]).unwrap().final_density())
    };
    let free = run(Interaction::None);
    let attracted = run(Interaction::Exact(KernelSpec::new(1.0).unwrap()));
    assert!((free - (0.26 + 0.045)).abs() < 1e-3, "{free}");
    assert!(attracted < 0.8 * free, "{attracted} vs {free}");
}

#[test]
fn frame_and_direct_agree_without_common_noise() {
    let grid = Grid::covering(-5.0, 5.0, 0.02).unwrap();
    let kernel = Interaction::Exact(KernelSpec::new(1.0).unwrap());
    let rho0 = project_initial(&Rho0Spec::gaussian(0.0, 0.5), grid).unwrap();
    let frame_cfg = SpdeConfig::new(SigmaSpec::Constant(0.8), 0.0, kernel.clone(), grid, 2.5e-5, 0.1).unwrap();
    let a = solve_moving_frame(&frame_cfg, &rho0, &vec![0.0; frame_cfg.n_steps]).unwrap();
    let b = solve_direct_em(&frame_cfg, &rho0, &vec![0.0; frame_cfg.n_steps]).unwrap();
    let d = a.final_density().l2_distance(b.final_density());
    assert!(d < 1e-4, "{d}");
}

#[test]
fn direct_scheme_on_a_zero_path() {
    // dW = 0: Ito-Euler keeps the (sigma^2 + nu^2)/2 generator, the Milstein term removes nu^2/2
    let (mut cfg, rho0) = heat_setup(0.04, 1e-4, 0.6, 0.2);
    let zero = vec![0.0; cfg.n_steps];
    cfg.milstein_correction = false;
    let ito = solve_direct_em(&cfg, &rho0, &zero).unwrap();
    assert!(lab_error(ito.final_density(), gaussian(0.0, 0.25 + 1.36 * 0.2)) < 1e-3);
    cfg.milstein_correction = true;
    let milstein = solve_direct_em(&cfg, &rho0, &zero).unwrap();
    assert!(lab_error(milstein.final_density(), gaussian(0.0, 0.25 + 0.2)) < 1e-3);
}

#[test]
fn direct_scheme_refuses_unstable_steps() {
    let (cfg, rho0) = heat_setup(0.02, 1e-3, 0.0, 0.1);
    assert!(matches!(solve_direct_em(&cfg, &rho0, &vec![0.0; cfg.n_steps]), Err(Error::InvalidParameter(_))));
}

fn l2_trajectory(sigma: f64, steps_per_checkpoint: usize) -> Vec<f64> {
    let grid = Grid::covering(-6.0, 6.0, 0.02).unwrap();
    let kernel = Interaction::Exact(KernelSpec::new(1.0).unwrap());
    let cfg = SpdeConfig::new(SigmaSpec::Constant(sigma), 0.25, kernel, grid, 1e-3, 0.5).unwrap().every_step();
    let rho0 = project_initial(&Rho0Spec::gaussian(0.0, 0.5), grid).unwrap();
    let dw = environment_increments(StreamKey::new(8, 0), cfg.n_steps, cfg.dt);
    let sol = solve_moving_frame(&cfg, &rho0, &dw).unwrap();
    sol.checkpoints.iter().step_by(steps_per_checkpoint).map(|c| c.l2_norm()).collect()
}

#[test]
fn l2_norm_decays_when_diffusion_dominates() {
    // 2 C_GNS^2 ||k||_1 <= sigma^2 holds for sigma = 1
    let norms = l2_trajectory(1.0, 1);
    for w in norms.windows(2) {
        assert!(w[1] <= w[0] + 1e-9);
    }
}

#[test]
fn initial_l2_rate_matches_quadrature() {
    // d/dt ||rho||^2 = -sigma^2 ||rho'||^2 + int (k * rho')(x) rho(x)^2 dx for N(0, s^2), R = 1
    let s = 0.5f64;
    let pdf = gaussian(0.0, s * s);
    let dpdf = |x: f64| -x / (s * s) * pdf(x);
    let grad_sq = 1.0 / (4.0 * std::f64::consts::PI.sqrt() * s.powi(3));
    let stretch = composite_gl(-5.0, 5.0, 200, |x| composite_gl(-1.0, 1.0, 16, |u| u * dpdf(x - u)) * pdf(x).powi(2));
    for sigma in [0.5f64, 1.0] {
        let oracle = -sigma * sigma * grad_sq + stretch;
        let norms = l2_trajectory(sigma, 1);
        let rate = (norms[1].powi(2) - norms[0].powi(2)) / 1e-3;
        assert!((rate - oracle).abs() < 0.05 * oracle.abs(), "sigma {sigma}: {rate} vs {oracle}");
    }
}

#[test]
fn monitors_raise_errors() {
    let (mut cfg, rho0) = heat_setup(0.02, 1e-3, 0.0, 0.1);
    cfg.tolerances.mass = 0.0;
    cfg.grid = Grid::covering(-1.0, 1.0, 0.02).unwrap();
    let narrow = project_initial(&Rho0Spec::bump(0.0, 1.0), cfg.grid).unwrap();
    match solve_moving_frame(&cfg, &narrow, &vec![0.0; cfg.n_steps]) {
        Err(Error::MassLeak { .. }) => {}
        other => panic!("expected a mass leak, got {other:?}"),
    }

    let kernel = Interaction::Exact(KernelSpec::new(1.0).unwrap());
    let grid = Grid::covering(-6.0, 6.0, 0.02).unwrap();
    let cfg = SpdeConfig::new(SigmaSpec::Constant(1.0), 0.0, kernel, grid, 0.05, 0.1).unwrap();
    let two = project_initial(&Rho0Spec::two_cluster(1.0, 0.1), grid).unwrap();
    assert!(matches!(solve_moving_frame(&cfg, &two, &[0.0, 0.0]), Err(Error::Cfl { .. })));

    assert!(solve_moving_frame(&cfg, &rho0, &[0.0]).is_err());
}

#[test]
fn drift_history_tracks_the_frame() {
    let (mut cfg, rho0) = heat_setup(0.02, 1e-3, 0.5, 0.01);
    cfg.interaction = Interaction::Exact(KernelSpec::new(1.0).unwrap());
    cfg.record_drift = true;
    let dw = environment_increments(StreamKey::new(2, 0), cfg.n_steps, cfg.dt);
    let sol = solve_moving_frame(&cfg, &rho0, &dw).unwrap();
    let h = sol.drift.unwrap();
    assert_eq!(h.n_steps(), cfg.n_steps);
    assert_eq!(h.offsets[0], 0.0);
    assert!((h.offsets[5] - 0.5 * dw[..5].iter().sum::<f64>()).abs() < 1e-15);
    // symmetric density: the field vanishes at the (shifted) center
    assert!(h.convolution_at(5, h.offsets[5]).unwrap().abs() < 1e-10);
}

#[test]
fn pairing_matches_quadrature() {
    let grid = Grid::covering(-5.0, 5.0, 0.01).unwrap();
    let rho = project_initial(&Rho0Spec::gaussian(0.2, 0.5), grid).unwrap();
    for phi in TestFunction::builtin() {
        let (lo, hi) = phi.support();
        let pdf = gaussian(0.2, 0.25);
        let oracle = composite_gl(lo, hi, 400, |x| phi.eval(x) * pdf(x));
        assert!((pairing(&rho, &phi).unwrap() - oracle).abs() < 1e-5, "{phi}");
    }
    let small = project_initial(&Rho0Spec::bump(0.0, 0.5), Grid::covering(-0.6, 0.6, 0.01).unwrap()).unwrap();
    assert!(pairing(&small, &TestFunction::builtin()[0]).is_err());
}

#[test]
fn auto_grid_covers_support_and_spread() {
    let kernel = Interaction::Exact(KernelSpec::new(1.0).unwrap());
    let rho0 = Rho0Spec::two_cluster(1.0, 0.1);
    let g = auto_grid(&rho0, &SigmaSpec::Constant(1.0), 0.25, 0.5, &kernel, 0.02).unwrap();
    let (lo, hi) = rho0.support_bounds();
    let margin = 6.0 * (0.5f64 * 1.0625).sqrt() + 1.0;
    assert!(g.x0 <= lo - margin && g.x_max() >= hi + margin);
    assert!(g.x0.abs() / 0.02 - (g.x0.abs() / 0.02).round() < 1e-9);
}

#[test]
fn step_count_requires_divisibility() {
    assert_eq!(step_count(0.5, 1e-3).unwrap(), 500);
    assert!(step_count(0.5, 0.3).is_err());
    assert_eq!(checkpoint_steps(&[0.0, 0.25], 0.05, 10).unwrap(), vec![0, 5, 10]);
    assert!(checkpoint_steps(&[2.0], 0.05, 10).is_err());
}

#[test]
fn variable_sigma_conserves_mass() {
    let grid = Grid::covering(-5.0, 5.0, 0.02).unwrap();
    let sigma = SigmaSpec::Bump { base: 0.6, amplitude: 0.4, half_width: 1.5 };
    let cfg = SpdeConfig::new(sigma, 0.3, Interaction::Exact(KernelSpec::new(1.0).unwrap()), grid, 1e-3, 0.2).unwrap();
    let rho0 = project_initial(&Rho0Spec::gaussian(0.0, 0.5), grid).unwrap();
    let dw = environment_increments(StreamKey::new(4, 0), cfg.n_steps, cfg.dt);
    let sol = solve_moving_frame(&cfg, &rho0, &dw).unwrap();
    assert!((sol.final_density().mass() - 1.0).abs() < 1e-9);
}
