//! Euler-Maruyama for the N-particle opinion system
//!
//! ```text
//! dX^i = -(1/(N-1)) sum_{j != i} k(X^i - X^j) dt + sigma(X^i) dB^i + nu dW
//! ```

use crate::error::{invalid, Error, Result};
use crate::kernel::{Interaction, KernelSpec, RegularizedKernel};
use crate::noise::NoiseBundle;
use crate::spde::{checkpoint_steps, step_count, SigmaSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub positions: Vec<f64>,
    pub time: f64,
}

impl ParticleEnsemble {
    pub fn new(positions: Vec<f64>, time: f64) -> Result<Self> {
        if let Some(index) = positions.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: 0, index });
        }
        Ok(Self { positions, time })
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn mean(&self) -> f64 {
        self.positions.iter().sum::<f64>() / self.n() as f64
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub sigma: SigmaSpec,
    pub nu: f64,
    pub interaction: Interaction,
    /// Step indices at which the ensemble is stored.
    pub checkpoint_steps: Vec<usize>,
}

impl SimConfig {
    pub fn new(n: usize, t_end: f64, dt: f64, sigma: SigmaSpec, nu: f64, interaction: Interaction) -> Result<Self> {
        if n == 0 {
            return Err(invalid("particle system needs N >= 1"));
        }
        sigma.validate_nonnegative()?;
        if !(nu >= 0.0) || !nu.is_finite() {
            return Err(invalid(format!("environmental noise amplitude must be >= 0, got {nu}")));
        }
        let n_steps = step_count(t_end, dt)?;
        Ok(Self { n, dt, n_steps, sigma, nu, interaction, checkpoint_steps: vec![n_steps] })
    }

    pub fn with_checkpoints(mut self, times: &[f64]) -> Result<Self> {
        self.checkpoint_steps = checkpoint_steps(times, self.dt, self.n_steps)?;
        Ok(self)
    }

    pub fn t_end(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }
}

/// `-(1/(N-1)) sum_{j != i} k(x_i - x_j)` by the direct pair loop.
pub fn drift_brute(positions: &[f64], kernel: &Interaction) -> Result<Vec<f64>> {
    let n = positions.len();
    if n < 2 {
        return Err(invalid(format!("pairwise drift needs N >= 2, got {n}")));
    }
    let mut drift = vec![0.0; n];
    if kernel.is_none() {
        return Ok(drift);
    }
    // k is odd, and fl(a - b) = -fl(b - a), so each pair is evaluated once
    for i in 0..n {
        let xi = positions[i];
        let mut acc = 0.0;
        for j in (i + 1)..n {
            let f = kernel.eval(xi - positions[j]);
            acc += f;
            drift[j] -= f;
        }
        drift[i] += acc;
    }
    let scale = -1.0 / (n - 1) as f64;
    drift.iter_mut().for_each(|d| *d *= scale);
    Ok(drift)
}

/// Sorted-order scratch space reused across steps.
#[derive(Debug, Clone, Default)]
pub struct DriftWorkspace {
    order: Vec<usize>,
    sorted: Vec<f64>,
    prefix: Vec<f64>,
}

impl DriftWorkspace {
    fn prepare(&mut self, positions: &[f64]) {
        let n = positions.len();
        if self.order.len() != n {
            self.order = (0..n).collect();
        }
        // previous order is nearly sorted after a small step
        self.order.sort_unstable_by(|&a, &b| positions[a].total_cmp(&positions[b]));
        self.sorted.clear();
        self.sorted.extend(self.order.iter().map(|&i| positions[i]));
        let pivot = self.sorted[n / 2];
        self.prefix.clear();
        self.prefix.push(0.0);
        let mut acc = 0.0;
        for x in &self.sorted {
            acc += x - pivot;
            self.prefix.push(acc);
        }
    }

    /// Inclusive neighbour window `[lo, hi)` of sorted index `k` within radius `r`,
    /// using the same rounded differences as [`drift_brute`].
    #[inline]
    fn window(&self, k: usize, r: f64) -> (usize, usize) {
        let xi = self.sorted[k];
        let lo = self.sorted[..=k].partition_point(|&xj| xi - xj > r);
        let hi = k + self.sorted[k..].partition_point(|&xj| xj - xi <= r);
        (lo, hi)
    }

    #[inline]
    fn core_sum(&self, k: usize, lo: usize, hi: usize) -> f64 {
        let pivot = self.sorted[self.sorted.len() / 2];
        (hi - lo) as f64 * (self.sorted[k] - pivot) - (self.prefix[hi] - self.prefix[lo])
    }
}

/// Exact-kernel drift in `O(N log N)`: inside the confidence window
/// `k_HK(x_i - x_j) = x_i - x_j`, so the sum is `c_i x_i - S_i` from prefix sums.
pub fn drift_fast(positions: &[f64], spec: &KernelSpec) -> Result<Vec<f64>> {
    let mut ws = DriftWorkspace::default();
    let mut out = vec![0.0; positions.len()];
    drift_fast_into(positions, spec, &mut ws, &mut out)?;
    Ok(out)
}

pub fn drift_fast_into(positions: &[f64], spec: &KernelSpec, ws: &mut DriftWorkspace, out: &mut [f64]) -> Result<()> {
    let n = positions.len();
    if n < 2 {
        return Err(invalid(format!("pairwise drift needs N >= 2, got {n}")));
    }
    ws.prepare(positions);
    let scale = -1.0 / (n - 1) as f64;
    for k in 0..n {
        let (lo, hi) = ws.window(k, spec.radius);
        out[ws.order[k]] = scale * ws.core_sum(k, lo, hi);
    }
    Ok(())
}

/// Regularized drift: prefix sums on `|x_i - x_j| <= R`, direct evaluation
/// only in the transition layer `R < |x_i - x_j| < R + 2 tau`.
pub fn drift_regularized_into(
    positions: &[f64],
    kernel: &RegularizedKernel,
    ws: &mut DriftWorkspace,
    out: &mut [f64],
) -> Result<()> {
    let n = positions.len();
    if n < 2 {
        return Err(invalid(format!("pairwise drift needs N >= 2, got {n}")));
    }
    ws.prepare(positions);
    let scale = -1.0 / (n - 1) as f64;
    let outer = kernel.support_radius();
    for k in 0..n {
        let xi = ws.sorted[k];
        let (lo, hi) = ws.window(k, kernel.radius());
        let (lo_out, hi_out) = ws.window(k, outer);
        let mut acc = ws.core_sum(k, lo, hi);
        for &xj in ws.sorted[lo_out..lo].iter().chain(&ws.sorted[hi..hi_out]) {
            acc += kernel.eval(xi - xj);
        }
        out[ws.order[k]] = scale * acc;
    }
    Ok(())
}

/// Drift for any interaction, choosing the fastest exact method. `N = 1` has zero drift.
pub fn drift_into(positions: &[f64], kernel: &Interaction, ws: &mut DriftWorkspace, out: &mut [f64]) -> Result<()> {
    if positions.len() < 2 || kernel.is_none() {
        out.iter_mut().for_each(|d| *d = 0.0);
        return Ok(());
    }
    match kernel {
        Interaction::None => unreachable!(),
        Interaction::Exact(spec) => drift_fast_into(positions, spec, ws, out),
        Interaction::Regularized(k) => drift_regularized_into(positions, k, ws, out),
    }
}

/// One step `x_i += drift_i dt + sigma(x_i) dB_i + nu dW`, in place.
pub fn step_em(
    ensemble: &mut ParticleEnsemble,
    config: &SimConfig,
    drift: &[f64],
    db: &[f64],
    dw: f64,
    step: usize,
) -> Result<()> {
    let n = ensemble.n();
    if db.len() != n || drift.len() != n {
        return Err(invalid(format!("noise slice has {} entries for {n} particles", db.len())));
    }
    let shift = config.nu * dw;
    let constant = config.sigma.is_constant().then(|| config.sigma.eval(0.0));
    for (i, x) in ensemble.positions.iter_mut().enumerate() {
        let s = constant.unwrap_or_else(|| config.sigma.eval(*x));
        *x += drift[i] * config.dt + s * db[i] + shift;
        if !x.is_finite() {
            return Err(Error::NonFinite { step, index: i });
        }
    }
    ensemble.time = (step + 1) as f64 * config.dt;
    Ok(())
}

/// Runs the system on `bundle` and returns the ensemble at every checkpoint.
pub fn simulate(config: &SimConfig, bundle: &NoiseBundle) -> Result<Vec<ParticleEnsemble>> {
    check_bundle(config.n, config.n_steps, config.dt, bundle)?;
    let mut ensemble = ParticleEnsemble::new(bundle.initial.clone(), 0.0)?;
    let mut out = Vec::with_capacity(config.checkpoint_steps.len());
    let mut next = 0;
    let mut ws = DriftWorkspace::default();
    let mut drift = vec![0.0; config.n];
    if config.checkpoint_steps.first() == Some(&0) {
        out.push(ensemble.clone());
        next = 1;
    }
    for step in 0..config.n_steps {
        drift_into(&ensemble.positions, &config.interaction, &mut ws, &mut drift)?;
        step_em(&mut ensemble, config, &drift, bundle.b_step(step), bundle.w[step], step)?;
        if config.checkpoint_steps.get(next) == Some(&(step + 1)) {
            out.push(ensemble.clone());
            next += 1;
        }
    }
    Ok(out)
}

pub(crate) fn check_bundle(n: usize, n_steps: usize, dt: f64, bundle: &NoiseBundle) -> Result<()> {
    if bundle.n != n || bundle.n_steps != n_steps || (bundle.dt - dt).abs() > 1e-12 * dt {
        return Err(invalid(format!(
            "bundle is sized for N = {}, {} steps of {}, config needs N = {n}, {n_steps} steps of {dt}",
            bundle.n, bundle.n_steps, bundle.dt
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::Rho0Spec;
    use rand_chacha::ChaCha8Rng;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn exact() -> Interaction {
        Interaction::Exact(KernelSpec::new(1.0).unwrap())
    }

    fn uniform(rng: &mut ChaCha8Rng, a: f64, b: f64) -> f64 {
        rng.gen_range(a..b)
    }

    #[test]
    fn brute_drift_examples() {
        assert_eq!(drift_brute(&[0.0, 0.5], &exact()).unwrap(), vec![0.5, -0.5]);
        assert_eq!(drift_brute(&[0.0, 3.0], &exact()).unwrap(), vec![0.0, 0.0]);
        assert_eq!(drift_brute(&[-1.0, 0.0, 1.0], &exact()).unwrap(), vec![0.5, 0.0, -0.5]);
        assert!(drift_brute(&[1.0], &exact()).is_err());
    }

    #[test]
    fn fast_drift_examples() {
        let spec = KernelSpec::new(1.0).unwrap();
        assert_eq!(drift_fast(&[0.0, 0.5], &spec).unwrap(), vec![0.5, -0.5]);
        assert_eq!(drift_fast(&[2.0; 7], &spec).unwrap(), vec![0.0; 7]);
        let mut out = vec![1.0];
        drift_into(&[3.0], &exact(), &mut DriftWorkspace::default(), &mut out).unwrap();
        assert_eq!(out, vec![0.0]);
    }

    #[test]
    fn fast_matches_brute_with_ties() {
        let spec = KernelSpec::new(1.0).unwrap();
        // exact +-R gaps, duplicates and dyadic lattices
        let configs: Vec<Vec<f64>> = vec![
            vec![0.0, 1.0, 2.0, 3.0, 1.0, 0.0],
            vec![0.5, 0.5, 1.5, -0.5, 1.5, 2.5, 0.5],
            (0..40).map(|i| (i % 9) as f64 * 0.25).collect(),
            vec![-1.0, 0.0, 0.0, 1.0, 1.0, 2.0],
        ];
        for x in configs {
            let fast = drift_fast(&x, &spec).unwrap();
            let brute = drift_brute(&x, &exact()).unwrap();
            for (f, b) in fast.iter().zip(&brute) {
                assert!((f - b).abs() <= 1e-12, "{x:?}: {f} vs {b}");
            }
        }
    }

    #[test]
    fn regularized_fast_matches_brute() {
        let kernel = Arc::new(RegularizedKernel::build(1.0, 0.3, 0.01).unwrap());
        let inter = Interaction::Regularized(kernel.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ws = DriftWorkspace::default();
        for n in [2usize, 10, 200] {
            for _ in 0..20 {
                let x: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
                let mut fast = vec![0.0; n];
                drift_regularized_into(&x, &kernel, &mut ws, &mut fast).unwrap();
                let brute = drift_brute(&x, &inter).unwrap();
                for (f, b) in fast.iter().zip(&brute) {
                    assert!((f - b).abs() <= 1e-12);
                }
            }
        }
    }

    fn bundle(seed: u64, n: usize, steps: usize, dt: f64) -> NoiseBundle {
        NoiseBundle::generate(seed, n, steps, dt, &Rho0Spec::two_cluster(1.0, 0.1)).unwrap()
    }

    #[test]
    fn pure_common_noise_translates_everyone() {
        let cfg = SimConfig::new(5, 0.1, 0.01, SigmaSpec::Constant(0.0), 1.0, Interaction::None).unwrap();
        let b = bundle(1, 5, 10, 0.01);
        let out = simulate(&cfg, &b).unwrap();
        let shift: f64 = b.w.iter().sum();
        for (x, x0) in out[0].positions.iter().zip(&b.initial) {
            assert!((x - x0 - shift).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_matches_hand_formula() {
        let cfg = SimConfig::new(2, 0.1, 0.1, SigmaSpec::Constant(0.7), 0.3, exact()).unwrap();
        let mut e = ParticleEnsemble::new(vec![0.0, 0.5], 0.0).unwrap();
        step_em(&mut e, &cfg, &[0.5, -0.5], &[0.2, -0.1], 0.05, 0).unwrap();
        assert!((e.positions[0] - (0.05 + 0.7 * 0.2 + 0.3 * 0.05)).abs() <= 1e-15);
        assert!((e.positions[1] - (0.5 - 0.05 - 0.07 + 0.015)).abs() <= 1e-15);
        assert!((e.time - 0.1).abs() < 1e-15);
    }

    #[test]
    fn nan_aborts_with_step_index() {
        let cfg = SimConfig::new(2, 0.1, 0.1, SigmaSpec::Constant(1.0), 0.0, Interaction::None).unwrap();
        let mut e = ParticleEnsemble::new(vec![0.0, 0.5], 0.0).unwrap();
        let err = step_em(&mut e, &cfg, &[0.0, 0.0], &[0.0, f64::NAN], 0.0, 7).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 7, index: 1 }));
        assert!(ParticleEnsemble::new(vec![f64::INFINITY], 0.0).is_err());
    }

    #[test]
    fn deterministic_given_bundle() {
        let cfg = SimConfig::new(30, 0.2, 0.01, SigmaSpec::Constant(1.0), 0.25, exact())
            .unwrap()
            .with_checkpoints(&[0.1, 0.2])
            .unwrap();
        let b = bundle(9, 30, 20, 0.01);
        assert_eq!(simulate(&cfg, &b).unwrap(), simulate(&cfg, &b).unwrap());
        assert_eq!(simulate(&cfg, &b).unwrap().len(), 2);
    }

    #[test]
    fn brownian_variance() {
        let n = 10_000;
        let cfg = SimConfig::new(n, 1.0, 0.01, SigmaSpec::Constant(1.0), 0.0, Interaction::None).unwrap();
        let b = NoiseBundle::generate(3, n, 100, 0.01, &Rho0Spec::gaussian(0.0, 0.5)).unwrap();
        let out = simulate(&cfg, &b).unwrap();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let gained = var(&out[0].positions) - var(&b.initial);
        assert!((gained - 1.0).abs() < 0.05, "{gained}");
    }

    #[test]
    fn separated_clusters_contract_independently() {
        let x0 = vec![-3.0, -2.8, -2.5, 2.5, 2.9, 3.1];
        let mut b = bundle(0, 6, 600, 0.01);
        b.initial = x0.clone();
        let cfg = SimConfig::new(6, 6.0, 0.01, SigmaSpec::Constant(0.0), 0.0, exact()).unwrap();
        let out = simulate(&cfg, &b).unwrap();
        let x = &out[0].positions;
        let left0 = x0[..3].iter().sum::<f64>() / 3.0;
        let right0 = x0[3..].iter().sum::<f64>() / 3.0;
        assert!((x[..3].iter().sum::<f64>() / 3.0 - left0).abs() < 1e-12);
        assert!((x[3..].iter().sum::<f64>() / 3.0 - right0).abs() < 1e-12);
        let spread = |v: &[f64]| v.iter().copied().fold(f64::MIN, f64::max) - v.iter().copied().fold(f64::MAX, f64::min);
        assert!(spread(&x[..3]) < 0.1 * spread(&x0[..3]));
        assert!(spread(&x[3..]) < 0.1 * spread(&x0[3..]));
    }
}
