use serde::Serialize;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `log(error)` on `log(size)`.
pub fn fit_rate(sizes: &[f64], errors: &[f64]) -> Result<RateFit> {
    if sizes.len() != errors.len() || sizes.len() < 3 {
        return Err(invalid(format!("rate fit needs >= 3 paired points, got {} and {}", sizes.len(), errors.len())));
    }
    if sizes.iter().chain(errors).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(invalid("rate fit needs positive finite sizes and errors"));
    }
    let x: Vec<f64> = sizes.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("rate fit needs at least two distinct sizes"));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).min(1.0) };
    Ok(RateFit { slope, intercept: my - slope * mx, r2 })
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Inputs of the propagation-of-chaos bound. The front factor and the generic
/// constant are not determined analytically, so both are free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants {
    /// `||k_HK||_{L2}^2`.
    pub kernel_l2_sq: f64,
    pub big_lambda: f64,
    pub c: f64,
    /// `||k_tau - k_HK||_{L2}^2`.
    pub kernel_gap_sq: f64,
    pub c_front: f64,
}

/// `C_front [1/N + exp((C + Lambda) T / tau) / ((N - 1) tau) + ||k_tau - k||^2]`.
pub fn theoretical_bound(n: usize, tau: f64, t_end: f64, k: &BoundConstants) -> f64 {
    let interaction = if n > 1 {
        ((k.c + k.big_lambda) * t_end / tau).exp() / ((n - 1) as f64 * tau)
    } else {
        f64::INFINITY
    };
    k.c_front * (1.0 / n as f64 + interaction + k.kernel_gap_sq)
}

/// Strong coupling bound `2 ||k_HK||^2 T exp((C + Lambda) T / tau) / ((N - 1) tau)`,
/// scaled by `c_front / 2` so that `c_front = 2` reproduces the displayed factor.
pub fn coupling_bound(n: usize, tau: f64, t_end: f64, k: &BoundConstants) -> f64 {
    if n < 2 {
        return f64::INFINITY;
    }
    k.c_front * k.kernel_l2_sq * t_end * ((k.c + k.big_lambda) * t_end / tau).exp() / ((n - 1) as f64 * tau)
}

/// Least-squares `C_front` for `error ~ C_front * shape` in log space.
pub fn fit_front_factor(errors: &[f64], shapes: &[f64]) -> f64 {
    let logs: Vec<f64> = errors.iter().zip(shapes).filter(|(e, s)| **e > 0.0 && **s > 0.0 && s.is_finite()).map(|(e, s)| (e / s).ln()).collect();
    if logs.is_empty() {
        return f64::NAN;
    }
    (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}
