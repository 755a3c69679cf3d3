//! Bounded-confidence interaction force and its mollified family.
//!
//! The exact force is `k(x) = x` on `[-R, R]` and zero outside. The regularized
//! force is `k_tau(x) = x * psi_tau(x)` where `psi_tau` is the indicator of
//! `[-R - tau, R + tau]` convolved with the standard bump mollifier scaled to
//! `[-tau, tau]`. It coincides with the exact force on `[-R, R]`, vanishes
//! identically outside `[-R - 2 tau, R + 2 tau]`, and its transition layers have
//! width `2 tau`.

use std::sync::{Arc, OnceLock};

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid::GridDensity;
use crate::quadrature::{composite_gl, gl8, integrate_with};

/// The exact interaction force with confidence radius `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelSpec {
    pub radius: f64,
}

impl KernelSpec {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(invalid(format!("confidence radius must be positive, got {radius}")));
        }
        Ok(Self { radius })
    }

    pub fn eval(&self, x: f64) -> f64 {
        eval_k_hk(x, self)
    }

    /// `||k||_{L1} = R^2`.
    pub fn l1_norm(&self) -> f64 {
        self.radius * self.radius
    }

    /// `||k||_{L2} = sqrt(2/3) R^{3/2}`.
    pub fn l2_norm(&self) -> f64 {
        (2.0 / 3.0 * self.radius.powi(3)).sqrt()
    }
}

/// `x * 1[|x| <= R]`; the closed interval is inclusive.
pub fn eval_k_hk(x: f64, spec: &KernelSpec) -> f64 {
    if x.abs() <= spec.radius {
        x
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// mollifier

const CDF_TABLE_CELLS: usize = 4096;

/// Unnormalized bump `exp(-1 / (1 - u^2))` on (-1, 1).
fn raw_bump(u: f64) -> f64 {
    if u.abs() < 1.0 {
        (-1.0 / (1.0 - u * u)).exp()
    } else {
        0.0
    }
}

struct Mollifier {
    norm: f64,
    cdf: Vec<f64>,
    density: Vec<f64>,
}

fn mollifier() -> &'static Mollifier {
    static TABLE: OnceLock<Mollifier> = OnceLock::new();
    TABLE.get_or_init(|| {
        // cell-wise Gauss-Legendre, accumulated with compensation
        let rule = gl8();
        let h = 2.0 / CDF_TABLE_CELLS as f64;
        let mut cdf = Vec::with_capacity(CDF_TABLE_CELLS + 1);
        let (mut sum, mut carry) = (0.0f64, 0.0f64);
        cdf.push(0.0);
        for i in 0..CDF_TABLE_CELLS {
            let a = -1.0 + i as f64 * h;
            let v = integrate_with(rule, a, a + h, raw_bump);
            let t = sum + v;
            carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
            sum = t;
            cdf.push(sum + carry);
        }
        let norm = sum + carry;
        cdf.iter_mut().for_each(|c| *c /= norm);
        cdf[CDF_TABLE_CELLS] = 1.0;
        let density = (0..=CDF_TABLE_CELLS).map(|i| raw_bump(-1.0 + i as f64 * h) / norm).collect();
        Mollifier { norm, cdf, density }
    })
}

/// Normalized unit mollifier density on (-1, 1).
pub fn mollifier_density(u: f64) -> f64 {
    raw_bump(u) / mollifier().norm
}

/// Cumulative distribution of the unit mollifier, by cubic Hermite
/// interpolation of a Gauss-Legendre table.
pub fn mollifier_cdf(u: f64) -> f64 {
    if u <= -1.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let m = mollifier();
    let h = 2.0 / CDF_TABLE_CELLS as f64;
    let s = (u + 1.0) / h;
    let i = (s.floor() as usize).min(CDF_TABLE_CELLS - 1);
    let t = s - i as f64;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * m.cdf[i] + h10 * h * m.density[i] + h01 * m.cdf[i + 1] + h11 * h * m.density[i + 1]
}

/// Peak of the unit mollifier density, `e^{-1} / Z`.
pub fn mollifier_peak() -> f64 {
    mollifier_density(0.0)
}

// ---------------------------------------------------------------------------
// regularized kernel

/// Samples of a kernel and its transition profile on a symmetric uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelSamples {
    pub step: f64,
    pub x: Vec<f64>,
    pub value: Vec<f64>,
    pub derivative: Vec<f64>,
    pub profile: Vec<f64>,
    pub profile_derivative: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelNorms {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub diff_l1: f64,
    pub diff_l2: f64,
    pub diff_linf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularizedKernel {
    radius: f64,
    tau: f64,
    grid_step: f64,
    samples: KernelSamples,
    norms: KernelNorms,
    derivative_constant: f64,
}

impl RegularizedKernel {
    /// Builds `k_tau` and tabulates it at `grid_step` over `[-R - 4 tau, R + 4 tau]`.
    pub fn build(radius: f64, tau: f64, grid_step: f64) -> Result<Self> {
        KernelSpec::new(radius)?;
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(invalid(format!("regularization width must be positive, got {tau}")));
        }
        if !(grid_step > 0.0) {
            return Err(invalid(format!("grid step must be positive, got {grid_step}")));
        }
        if grid_step > tau / 8.0 {
            return Err(Error::GridTooCoarse(format!(
                "grid step {grid_step} does not resolve the transition layer (need <= tau/8 = {})",
                tau / 8.0
            )));
        }
        let mut kernel = Self {
            radius,
            tau,
            grid_step,
            samples: KernelSamples {
                step: grid_step,
                x: Vec::new(),
                value: Vec::new(),
                derivative: Vec::new(),
                profile: Vec::new(),
                profile_derivative: Vec::new(),
            },
            norms: KernelNorms { l1: 0.0, l2: 0.0, linf: 0.0, diff_l1: 0.0, diff_l2: 0.0, diff_linf: 0.0 },
            derivative_constant: tau + (radius + 2.0 * tau) * mollifier_peak(),
        };
        let half = ((radius + 4.0 * tau) / grid_step).ceil() as i64;
        for j in -half..=half {
            let x = j as f64 * grid_step;
            kernel.samples.x.push(x);
            kernel.samples.value.push(kernel.eval(x));
            kernel.samples.derivative.push(kernel.derivative(x));
            kernel.samples.profile.push(kernel.profile(x));
            kernel.samples.profile_derivative.push(kernel.profile_derivative(x));
        }
        kernel.norms = kernel.compute_norms();
        Ok(kernel)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    pub fn samples(&self) -> &KernelSamples {
        &self.samples
    }

    pub fn norms(&self) -> KernelNorms {
        self.norms
    }

    /// Outer edge of the support, `R + 2 tau`.
    pub fn support_radius(&self) -> f64 {
        self.radius + 2.0 * self.tau
    }

    /// Declared constant `C` with `|k_tau'| <= C / tau`:
    /// `|psi + x psi'| <= 1 + (R + 2 tau) * peak / tau`.
    pub fn derivative_constant(&self) -> f64 {
        self.derivative_constant
    }

    /// Profile on `R < |x| < R + 2 tau`, as a function of `|x|`.
    #[inline]
    fn tail(&self, a: f64) -> f64 {
        1.0 - mollifier_cdf((a - self.radius - self.tau) / self.tau)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let a = x.abs();
        if a <= self.radius {
            x
        } else if a >= self.radius + 2.0 * self.tau {
            0.0
        } else {
            x * self.tail(a)
        }
    }

    pub fn profile(&self, x: f64) -> f64 {
        let a = x.abs();
        if a <= self.radius {
            1.0
        } else if a >= self.radius + 2.0 * self.tau {
            0.0
        } else {
            self.tail(a)
        }
    }

    pub fn profile_derivative(&self, x: f64) -> f64 {
        let a = x.abs();
        if a <= self.radius || a >= self.radius + 2.0 * self.tau {
            return 0.0;
        }
        let slope = mollifier_density((a - self.radius - self.tau) / self.tau) / self.tau;
        if x > 0.0 {
            -slope
        } else {
            slope
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.profile(x) + x * self.profile_derivative(x)
    }

    /// `||k_tau - k_HK||_{L2}`.
    pub fn l2_distance(&self) -> f64 {
        self.norms.diff_l2
    }

    fn compute_norms(&self) -> KernelNorms {
        let r = self.radius;
        let edge = self.support_radius();
        let panels = ((edge - r) / self.grid_step).ceil().max(8.0) as usize;
        let tail_l1 = composite_gl(r, edge, panels, |x| x * self.tail(x));
        let tail_l2 = composite_gl(r, edge, panels, |x| (x * self.tail(x)).powi(2));
        let tail_sup = sup_on(r, edge, |x| x * self.tail(x)).max(r);
        KernelNorms {
            l1: r * r + 2.0 * tail_l1,
            l2: (2.0 * r.powi(3) / 3.0 + 2.0 * tail_l2).sqrt(),
            linf: tail_sup,
            diff_l1: 2.0 * tail_l1,
            diff_l2: (2.0 * tail_l2).sqrt(),
            diff_linf: tail_sup,
        }
    }

    pub fn property_report(&self) -> KernelReport {
        property_report(self.radius, self.tau, &self.samples, self.derivative_constant, Some(self.norms.linf))
    }
}

/// Maximum of `f` over `[a, b]`: dense scan then golden-section refinement.
fn sup_on(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = 2048;
    let h = (b - a) / n as f64;
    let (mut best_i, mut best) = (0, f(a));
    for i in 1..=n {
        let v = f(a + i as f64 * h);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let mut lo = a + (best_i as f64 - 1.0).max(0.0) * h;
    let mut hi = a + (best_i as f64 + 1.0).min(n as f64) * h;
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if f(m1) < f(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    best.max(f(0.5 * (lo + hi)))
}

// ---------------------------------------------------------------------------
// property report

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
    pub bound: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelReport {
    pub radius: f64,
    pub tau: f64,
    pub grid_step: f64,
    pub checks: Vec<PropertyCheck>,
    pub derivative_constant: f64,
    /// Largest `tau` for which `||k_tau||_inf <= ||k_HK||_L2 / tau` holds.
    pub linf_bound_binding_tau: f64,
    /// Whether the squared reading `||k_tau||_inf^2 <= (2/tau) ||k_HK||_L2^2` holds.
    pub linf_squared_reading_holds: bool,
    pub all_passed: bool,
}

impl KernelReport {
    pub fn check(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Evaluates the four structural properties on tabulated samples.
///
/// Failures are recorded as report entries; this never errors.
pub fn property_report(
    radius: f64,
    tau: f64,
    samples: &KernelSamples,
    derivative_constant: f64,
    linf: Option<f64>,
) -> KernelReport {
    let edge = radius + 2.0 * tau;
    let slack = 1e-12 * edge;

    let support_edge = samples
        .x
        .iter()
        .zip(&samples.value)
        .filter(|(_, v)| **v != 0.0)
        .map(|(x, _)| x.abs())
        .fold(0.0, f64::max);
    let support = PropertyCheck {
        name: "support",
        passed: support_edge <= edge + slack,
        measured: support_edge,
        bound: edge,
        detail: "largest |x| with k_tau(x) != 0 versus R + 2 tau".into(),
    };

    let (mut inner, mut outer) = (f64::INFINITY, 0.0f64);
    for (x, d) in samples.x.iter().zip(&samples.profile_derivative) {
        if *d != 0.0 {
            inner = inner.min(x.abs());
            outer = outer.max(x.abs());
        }
    }
    let layer_ok = outer == 0.0 || (inner >= radius - 2.0 * tau - slack && outer <= edge + slack);
    let derivative_support = PropertyCheck {
        name: "derivative_support",
        passed: layer_ok,
        measured: outer,
        bound: edge,
        detail: format!(
            "nonzero psi' found on {} <= |x| <= {outer}; allowed [R - 2 tau, R + 2 tau]",
            if inner.is_finite() { inner } else { 0.0 }
        ),
    };

    let max_slope = samples.derivative.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let realized = tau * max_slope;
    let derivative_bound = PropertyCheck {
        name: "derivative_bound",
        passed: realized <= derivative_constant * (1.0 + 1e-12),
        measured: realized,
        bound: derivative_constant,
        detail: "tau * max |k_tau'| versus the declared constant C".into(),
    };

    let sampled_sup = samples.value.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let sup = linf.map_or(sampled_sup, |l| l.max(sampled_sup));
    let hk_l2 = KernelSpec { radius }.l2_norm();
    let linf_bound = PropertyCheck {
        name: "linf_bound",
        passed: sup <= hk_l2 / tau,
        measured: sup,
        bound: hk_l2 / tau,
        detail: "||k_tau||_inf versus ||k_HK||_L2 / tau".into(),
    };

    let checks = vec![support, derivative_support, derivative_bound, linf_bound];
    let all_passed = checks.iter().all(|c| c.passed);
    KernelReport {
        radius,
        tau,
        grid_step: samples.step,
        checks,
        derivative_constant,
        linf_bound_binding_tau: linf_binding_tau(radius),
        linf_squared_reading_holds: sup * sup <= 2.0 / tau * hk_l2 * hk_l2,
        all_passed,
    }
}

/// `sup |k_tau|` as a function of `tau`, from the scaled tail profile.
fn kernel_sup(radius: f64, tau: f64) -> f64 {
    sup_on(0.0, 2.0, |s| (radius + tau * s) * (1.0 - mollifier_cdf(s - 1.0))).max(radius)
}

/// Solves `tau * sup|k_tau| = ||k_HK||_L2` by bisection.
fn linf_binding_tau(radius: f64) -> f64 {
    let target = KernelSpec { radius }.l2_norm();
    let (mut lo, mut hi) = (0.0, target / radius);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid * kernel_sup(radius, mid) > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

// ---------------------------------------------------------------------------
// interaction + convolution

/// The interaction used by a particle system or density solver.
#[derive(Debug, Clone)]
pub enum Interaction {
    None,
    Exact(KernelSpec),
    Regularized(Arc<RegularizedKernel>),
}

impl Interaction {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Interaction::None => 0.0,
            Interaction::Exact(spec) => spec.eval(x),
            Interaction::Regularized(k) => k.eval(x),
        }
    }

    /// Radius outside of which the kernel vanishes.
    pub fn support_radius(&self) -> f64 {
        match self {
            Interaction::None => 0.0,
            Interaction::Exact(spec) => spec.radius,
            Interaction::Regularized(k) => k.support_radius(),
        }
    }

    pub fn l1_norm(&self) -> f64 {
        match self {
            Interaction::None => 0.0,
            Interaction::Exact(spec) => spec.l1_norm(),
            Interaction::Regularized(k) => k.norms().l1,
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Interaction::None)
    }

    pub fn label(&self) -> String {
        match self {
            Interaction::None => "none".into(),
            Interaction::Exact(_) => "exact".into(),
            Interaction::Regularized(k) => format!("reg:{}", k.tau()),
        }
    }
}

/// Banded convolution weights `w_m`, `m = -half..=half`, for a grid step `dx`:
/// `(k * rho)(x_i) ~ sum_m w_m rho_{i - m}`.
///
/// Smooth kernels use trapezoid weights `dx * k(m dx)`. The exact force has a
/// jump at `+-R`, so its weights integrate `k` exactly against the hat basis
/// of the piecewise-linear interpolant of `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionTaps {
    pub dx: f64,
    pub half: usize,
    pub weights: Vec<f64>,
}

impl ConvolutionTaps {
    pub fn new(interaction: &Interaction, dx: f64) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(invalid(format!("grid step must be positive, got {dx}")));
        }
        match interaction {
            Interaction::None => Ok(Self { dx, half: 0, weights: vec![0.0] }),
            Interaction::Exact(spec) => {
                let r = spec.radius;
                if r / dx < 8.0 {
                    return Err(Error::GridTooCoarse(format!(
                        "kernel support R = {r} spans fewer than 8 cells of width {dx}"
                    )));
                }
                let half = (r / dx).ceil() as usize + 1;
                let weights = (-(half as i64)..=half as i64).map(|m| hat_weight_hk(r, m as f64 * dx, dx)).collect();
                Ok(Self { dx, half, weights })
            }
            Interaction::Regularized(k) => {
                if dx > k.tau() / 8.0 {
                    return Err(Error::GridTooCoarse(format!(
                        "grid step {dx} does not resolve the transition layer (need <= tau/8 = {})",
                        k.tau() / 8.0
                    )));
                }
                let half = (k.support_radius() / dx).ceil() as usize;
                let weights = (-(half as i64)..=half as i64).map(|m| dx * k.eval(m as f64 * dx)).collect();
                Ok(Self { dx, half, weights })
            }
        }
    }

    /// Writes `(k * rho)` at nodes `out_range` into `out`, using only the
    /// density nodes in `src_range` (the rest are treated as zero).
    pub fn apply_ranges(
        &self,
        rho: &[f64],
        out: &mut [f64],
        src_range: std::ops::Range<usize>,
        out_range: std::ops::Range<usize>,
    ) {
        let h = self.half;
        let n = rho.len();
        // weights reversed so the inner loop walks rho forward: out_i = sum_j w[h + i - j] rho_j
        for (i, slot) in out.iter_mut().enumerate().take(out_range.end.min(n)).skip(out_range.start) {
            let lo = i.saturating_sub(h).max(src_range.start);
            let hi = (i + h + 1).min(src_range.end).min(n);
            if lo >= hi {
                *slot = 0.0;
                continue;
            }
            let base = h + i;
            let mut acc = 0.0;
            for (j, r) in rho[lo..hi].iter().enumerate() {
                acc += self.weights[base - (lo + j)] * r;
            }
            *slot = acc;
        }
    }

    pub fn apply(&self, rho: &[f64], out: &mut [f64]) {
        self.apply_ranges(rho, out, 0..rho.len(), 0..rho.len());
    }
}

/// `int k_HK(u) hat((u - c) / h) du` over the two linear pieces of the hat at `c`.
fn hat_weight_hk(r: f64, c: f64, h: f64) -> f64 {
    let clip = |a: f64, b: f64| (a.max(-r), b.min(r));
    let mut w = 0.0;
    // rising piece: (u - (c - h)) / h on [c - h, c]
    let (a, b) = clip(c - h, c);
    if b > a {
        let s = c - h;
        w += ((b.powi(3) - a.powi(3)) / 3.0 - s * (b * b - a * a) / 2.0) / h;
    }
    // falling piece: ((c + h) - u) / h on [c, c + h]
    let (a, b) = clip(c, c + h);
    if b > a {
        let e = c + h;
        w += (e * (b * b - a * a) / 2.0 - (b.powi(3) - a.powi(3)) / 3.0) / h;
    }
    w
}

/// `(k * rho)` on rho's own grid. Frame offsets cancel in a convolution, so the
/// result carries rho's frame metadata unchanged.
pub fn convolve_density(interaction: &Interaction, rho: &GridDensity) -> Result<GridDensity> {
    if rho.values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(invalid("convolution needs a finite nonnegative density"));
    }
    let taps = ConvolutionTaps::new(interaction, rho.dx)?;
    let mut out = vec![0.0; rho.values.len()];
    taps.apply(&rho.values, &mut out);
    Ok(GridDensity { values: out, ..rho.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::quadrature::trapezoid;

    #[test]
    fn exact_force_examples() {
        let spec = KernelSpec::new(1.0).unwrap();
        assert_eq!(eval_k_hk(0.5, &spec), 0.5);
        assert_eq!(eval_k_hk(2.0, &spec), 0.0);
        assert_eq!(eval_k_hk(-0.3, &spec), -0.3);
        assert_eq!(eval_k_hk(1.0, &spec), 1.0);
        assert_eq!(eval_k_hk(-1.0, &spec), -1.0);
        assert!(KernelSpec::new(0.0).is_err());
    }

    #[test]
    fn mollifier_cdf_matches_direct_quadrature() {
        for i in 0..200 {
            let u = -0.995 + i as f64 * 0.01;
            let direct = composite_gl(-1.0, u, 400, raw_bump) / composite_gl(-1.0, 1.0, 800, raw_bump);
            assert!((mollifier_cdf(u) - direct).abs() < 1e-12, "u = {u}");
        }
        assert!((mollifier_cdf(0.0) - 0.5).abs() < 1e-14, "{:e}", mollifier_cdf(0.0) - 0.5);
    }

    #[test]
    fn build_rejects_bad_parameters() {
        assert!(matches!(RegularizedKernel::build(1.0, 0.0, 0.001), Err(Error::InvalidParameter(_))));
        assert!(matches!(RegularizedKernel::build(1.0, -0.1, 0.001), Err(Error::InvalidParameter(_))));
        assert!(matches!(RegularizedKernel::build(1.0, 0.1, 0.02), Err(Error::GridTooCoarse(_))));
    }

    #[test]
    fn regularized_examples() {
        let k = RegularizedKernel::build(1.0, 0.1, 0.1 / 16.0).unwrap();
        assert_eq!(k.eval(0.5), 0.5);
        assert_eq!(k.eval(1.2), 0.0);
        assert_eq!(k.eval(-1.2), 0.0);
        assert!(k.eval(1.1) > 0.0 && k.eval(1.1) < 1.1);
        let edge = k.samples().x.iter().zip(&k.samples().value).filter(|(_, v)| **v != 0.0).map(|(x, _)| x.abs());
        assert!(edge.fold(0.0, f64::max) <= 1.2);
    }

    #[test]
    fn regularized_is_odd_and_agrees_inside() {
        let k = RegularizedKernel::build(1.0, 0.3, 0.3 / 10.0).unwrap();
        for i in 0..=4000 {
            let x = -2.0 + i as f64 * 0.001;
            assert!((k.eval(x) + k.eval(-x)).abs() <= 1e-12);
            if x.abs() <= 1.0 {
                assert_eq!(k.eval(x), x);
            }
            if x.abs() >= 1.6 {
                assert_eq!(k.eval(x), 0.0);
            }
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let k = RegularizedKernel::build(1.0, 0.2, 0.2 / 8.0).unwrap();
        let h = 1e-6;
        for i in 0..100 {
            let x = 0.95 + i as f64 * 0.005;
            let fd = (k.eval(x + h) - k.eval(x - h)) / (2.0 * h);
            assert!((fd - k.derivative(x)).abs() < 1e-5, "x = {x}: {fd} vs {}", k.derivative(x));
        }
    }

    #[test]
    fn squared_l2_distance_agrees_with_fine_trapezoid() {
        // oracle: trapezoid on a grid 10x finer than the kernel's step, over the
        // layer [R, R + 2 tau] where the difference is smooth (right limit at R)
        let tau = 0.1;
        let k = RegularizedKernel::build(1.0, tau, tau / 8.0).unwrap();
        let fine = tau / 80.0;
        let n = (2.0 * tau / fine).round() as usize;
        let sq: Vec<f64> = (0..=n)
            .map(|i| {
                let x = 1.0 + i as f64 * fine;
                let d = if i == 0 { 1.0 } else { k.eval(x) - eval_k_hk(x, &KernelSpec { radius: 1.0 }) };
                d * d
            })
            .collect();
        let oracle = 2.0 * trapezoid(&sq, fine);
        let got = k.l2_distance().powi(2);
        // c = 2 (1 + 2 tau)^2 bounds 2 * int x^2 psi^2 over the layer of width 2 tau
        assert!(got > 0.0 && got <= 2.0 * (1.0 + 2.0 * tau).powi(2) * tau, "got {got}");
        assert!((got - oracle).abs() / oracle < 1e-3, "{got} vs {oracle}");
    }

    #[test]
    fn l2_distance_is_resolution_independent() {
        let a = RegularizedKernel::build(1.0, 0.1, 0.1 / 8.0).unwrap().l2_distance();
        let b = RegularizedKernel::build(1.0, 0.1, 0.1 / 16.0).unwrap().l2_distance();
        assert!((a - b).abs() / a <= 1e-4);
    }

    #[test]
    fn l2_distance_decreases_with_tau() {
        let d: Vec<f64> =
            [0.2, 0.1, 0.05].iter().map(|&t| RegularizedKernel::build(1.0, t, t / 8.0).unwrap().l2_distance()).collect();
        assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
    }

    #[test]
    fn report_passes_for_constructed_kernels() {
        for tau in [0.1, 0.5] {
            let k = RegularizedKernel::build(1.0, tau, tau / 8.0).unwrap();
            let r = k.property_report();
            assert!(r.all_passed, "tau = {tau}: {r:#?}");
            assert!(r.check("support").unwrap().measured <= 1.0 + 2.0 * tau);
        }
    }

    #[test]
    fn report_flags_a_flat_profile() {
        let k = RegularizedKernel::build(1.0, 0.1, 0.1 / 8.0).unwrap();
        let mut s = k.samples().clone();
        s.profile.iter_mut().for_each(|p| *p = 1.0);
        s.profile_derivative.iter_mut().for_each(|p| *p = 0.0);
        s.value = s.x.clone();
        s.derivative.iter_mut().for_each(|d| *d = 1.0);
        let r = property_report(1.0, 0.1, &s, k.derivative_constant(), None);
        assert!(!r.check("support").unwrap().passed);
        assert!(!r.all_passed);
    }

    #[test]
    fn binding_tau_is_where_linf_bullet_stops_holding() {
        let t = linf_binding_tau(1.0);
        assert!(t > 0.1 && t < 1.0, "{t}");
        let below = RegularizedKernel::build(1.0, 0.9 * t, 0.9 * t / 8.0).unwrap().property_report();
        let above = RegularizedKernel::build(1.0, 1.1 * t, 1.1 * t / 8.0).unwrap().property_report();
        assert!(below.check("linf_bound").unwrap().passed);
        assert!(!above.check("linf_bound").unwrap().passed);
    }

    fn gaussian_on(grid: Grid, mean: f64, s: f64) -> GridDensity {
        let mut rho = GridDensity::from_fn(grid, |x| (-(x - mean).powi(2) / (2.0 * s * s)).exp());
        rho.normalize().unwrap();
        rho
    }

    #[test]
    fn convolution_with_narrow_density_recovers_the_force() {
        let grid = Grid::covering(-3.0, 3.0, 0.001).unwrap();
        let rho = gaussian_on(grid, 0.0, 0.01);
        let spec = KernelSpec::new(1.0).unwrap();
        let conv = convolve_density(&Interaction::Exact(spec), &rho).unwrap();
        let mut worst = 0.0f64;
        for (i, x) in grid.nodes().enumerate() {
            // the smeared jump at |x| = R is excluded (10 standard deviations)
            if (x.abs() - 1.0).abs() < 0.1 {
                continue;
            }
            worst = worst.max((conv.values[i] - spec.eval(x)).abs());
        }
        assert!(worst <= 0.02, "{worst}");
    }

    #[test]
    fn convolution_of_even_density_vanishes_at_origin() {
        let grid = Grid::covering(-4.0, 4.0, 0.01).unwrap();
        let rho = gaussian_on(grid, 0.0, 0.6);
        let mid = grid.n / 2;
        assert!(grid.x(mid).abs() < 1e-12);
        for inter in [
            Interaction::Exact(KernelSpec { radius: 1.0 }),
            Interaction::Regularized(Arc::new(RegularizedKernel::build(1.0, 0.2, 0.01).unwrap())),
        ] {
            let conv = convolve_density(&inter, &rho).unwrap();
            assert!(conv.values[mid].abs() < 1e-14);
        }
    }

    #[test]
    fn convolution_of_uniform_matches_piecewise_integral() {
        let dx = 0.001;
        let grid = Grid::covering(-3.0, 3.0, dx).unwrap();
        let rho = GridDensity::from_fn(grid, |x| if x.abs() <= 0.5 + 1e-12 { 1.0 } else { 0.0 });
        let conv = convolve_density(&Interaction::Exact(KernelSpec { radius: 1.0 }), &rho).unwrap();
        let at = |x: f64| conv.values[((x - grid.x0) / dx).round() as usize];
        assert!(at(0.0).abs() < 1e-12);
        // oracle: int_{0}^{1/2} (1 - y) dy = 3/8
        assert!((at(1.0) - 0.375).abs() < 2e-3, "{}", at(1.0));
        // oracle at x = 0.25: int_{-1/2}^{1/2} (0.25 - y) dy = 0.25
        assert!((at(0.25) - 0.25).abs() < 2e-3, "{}", at(0.25));
    }

    #[test]
    fn convolution_is_linear() {
        let grid = Grid::covering(-4.0, 4.0, 0.01).unwrap();
        let a = gaussian_on(grid, -0.5, 0.3);
        let b = gaussian_on(grid, 0.7, 0.5);
        let inter = Interaction::Regularized(Arc::new(RegularizedKernel::build(1.0, 0.2, 0.01).unwrap()));
        let mix = GridDensity {
            values: a.values.iter().zip(&b.values).map(|(x, y)| 0.3 * x + 1.7 * y).collect(),
            ..a.clone()
        };
        let ca = convolve_density(&inter, &a).unwrap();
        let cb = convolve_density(&inter, &b).unwrap();
        let cm = convolve_density(&inter, &mix).unwrap();
        for i in 0..grid.n {
            assert!((cm.values[i] - (0.3 * ca.values[i] + 1.7 * cb.values[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let grid = Grid::covering(-4.0, 4.0, 0.2).unwrap();
        let rho = gaussian_on(grid, 0.0, 0.5);
        assert!(matches!(
            convolve_density(&Interaction::Exact(KernelSpec { radius: 1.0 }), &rho),
            Err(Error::GridTooCoarse(_))
        ));
    }
}
