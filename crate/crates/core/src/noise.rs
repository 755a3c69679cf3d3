//! Reproducible driving noise.
//!
//! Every random stream is a ChaCha8 keystream keyed by `(seed, replica)` and
//! selected by a 64-bit stream id `(kind << 48) | index`. The map
//! `(seed, replica, kind, index) -> stream` is injective, so the environmental
//! path, each idiosyncratic path and each initial opinion are independent of
//! how many particles are requested. Gaussian increments use Box-Muller with a
//! fixed two words per draw, so extending `n_steps` preserves every prefix.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::composite_gl;

const KIND_ENVIRONMENT: u64 = 1;
const KIND_IDIOSYNCRATIC: u64 = 2;
const KIND_INITIAL: u64 = 3;

/// Key of a family of streams: the run seed and a replica id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub replica: u64,
}

impl StreamKey {
    pub fn new(seed: u64, replica: u64) -> Self {
        Self { seed, replica }
    }

    pub fn stream_id(kind: u64, index: u64) -> u64 {
        debug_assert!(index < 1 << 48);
        (kind << 48) | index
    }

    pub fn rng(&self, kind: u64, index: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.replica.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(Self::stream_id(kind, index));
        rng
    }
}

/// Uniform in (0, 1].
#[inline]
fn open_unit(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal from exactly two 64-bit words.
#[inline]
fn standard_normal(rng: &mut impl RngCore) -> f64 {
    let u1 = open_unit(rng);
    let u2 = open_unit(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// `len` centered Gaussian increments with variance `dt`.
fn increments(rng: &mut impl RngCore, len: usize, dt: f64) -> Vec<f64> {
    let s = dt.sqrt();
    (0..len).map(|_| s * standard_normal(rng)).collect()
}

// ---------------------------------------------------------------------------
// initial densities

/// Built-in initial opinion densities.
///
/// Text form: `gaussian:MEAN,STD`, `two-cluster:WEIGHT,M1,S1,M2,S2`, `bump:CENTER,HALF_WIDTH`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rho0Spec {
    /// Normal density truncated at `truncation` standard deviations.
    Gaussian { mean: f64, std: f64, truncation: f64 },
    /// `w N(m1, s1^2) + (1 - w) N(m2, s2^2)`.
    TwoCluster { weight: f64, mean1: f64, std1: f64, mean2: f64, std2: f64 },
    /// `c (1 - ((x - center) / half_width)^2)^4` on its support.
    Bump { center: f64, half_width: f64 },
}

/// Default truncation of the Gaussian family, in standard deviations.
pub const GAUSSIAN_TRUNCATION: f64 = 8.0;

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

impl Rho0Spec {
    pub fn gaussian(mean: f64, std: f64) -> Self {
        Rho0Spec::Gaussian { mean, std, truncation: GAUSSIAN_TRUNCATION }
    }

    pub fn two_cluster(center: f64, std: f64) -> Self {
        Rho0Spec::TwoCluster { weight: 0.5, mean1: -center, std1: std, mean2: center, std2: std }
    }

    pub fn bump(center: f64, half_width: f64) -> Self {
        Rho0Spec::Bump { center, half_width }
    }

    /// One preset of each family, used by invariant sweeps.
    pub fn presets() -> [Rho0Spec; 3] {
        [Self::gaussian(0.0, 0.5), Self::two_cluster(1.0, 0.1), Self::bump(0.0, 1.0)]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Rho0Spec::Gaussian { mean, std, truncation } => mean.is_finite() && std > 0.0 && truncation > 0.0,
            Rho0Spec::TwoCluster { weight, mean1, std1, mean2, std2 } => {
                (0.0..=1.0).contains(&weight) && mean1.is_finite() && mean2.is_finite() && std1 > 0.0 && std2 > 0.0
            }
            Rho0Spec::Bump { center, half_width } => center.is_finite() && half_width > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid initial density {self}")))
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Rho0Spec::Gaussian { mean, std, truncation } => {
                let z = (x - mean) / std;
                if z.abs() > truncation {
                    return 0.0;
                }
                let mass = composite_gl(-truncation, truncation, 64, normal_pdf);
                normal_pdf(z) / (std * mass)
            }
            Rho0Spec::TwoCluster { weight, mean1, std1, mean2, std2 } => {
                weight * normal_pdf((x - mean1) / std1) / std1 + (1.0 - weight) * normal_pdf((x - mean2) / std2) / std2
            }
            Rho0Spec::Bump { center, half_width } => {
                let u = (x - center) / half_width;
                if u.abs() >= 1.0 {
                    0.0
                } else {
                    (1.0 - u * u).powi(4) * 315.0 / (256.0 * half_width)
                }
            }
        }
    }

    /// An interval outside of which the mass is below 1e-12.
    pub fn support_bounds(&self) -> (f64, f64) {
        // P(|Z| > 7.2) < 1e-12
        const Z: f64 = 7.2;
        match *self {
            Rho0Spec::Gaussian { mean, std, truncation } => {
                let z = truncation.min(Z);
                (mean - z * std, mean + z * std)
            }
            Rho0Spec::TwoCluster { mean1, std1, mean2, std2, .. } => {
                ((mean1 - Z * std1).min(mean2 - Z * std2), (mean1 + Z * std1).max(mean2 + Z * std2))
            }
            Rho0Spec::Bump { center, half_width } => (center - half_width, center + half_width),
        }
    }

    /// One draw; consumes a variable number of words from `rng`.
    pub fn sample(&self, rng: &mut impl RngCore) -> f64 {
        match *self {
            Rho0Spec::Gaussian { mean, std, truncation } => loop {
                let z = standard_normal(rng);
                if z.abs() <= truncation {
                    return mean + std * z;
                }
            },
            Rho0Spec::TwoCluster { weight, mean1, std1, mean2, std2 } => {
                let pick_first = open_unit(rng) <= weight;
                let z = standard_normal(rng);
                if pick_first {
                    mean1 + std1 * z
                } else {
                    mean2 + std2 * z
                }
            }
            Rho0Spec::Bump { center, half_width } => loop {
                let u = 2.0 * open_unit(rng) - 1.0;
                if open_unit(rng) <= (1.0 - u * u).powi(4) {
                    return center + half_width * u;
                }
            },
        }
    }
}

impl fmt::Display for Rho0Spec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Rho0Spec::Gaussian { mean, std, truncation } => {
                if truncation == GAUSSIAN_TRUNCATION {
                    write!(f, "gaussian:{mean},{std}")
                } else {
                    write!(f, "gaussian:{mean},{std},{truncation}")
                }
            }
            Rho0Spec::TwoCluster { weight, mean1, std1, mean2, std2 } => {
                write!(f, "two-cluster:{weight},{mean1},{std1},{mean2},{std2}")
            }
            Rho0Spec::Bump { center, half_width } => write!(f, "bump:{center},{half_width}"),
        }
    }
}

pub(crate) fn parse_numbers(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| invalid(format!("not a number: {p:?}"))))
        .collect()
}

impl FromStr for Rho0Spec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (family, args) = s.split_once(':').unwrap_or((s, ""));
        let v = if args.is_empty() { Vec::new() } else { parse_numbers(args)? };
        let spec = match (family.trim(), v.as_slice()) {
            ("gaussian", []) => Self::gaussian(0.0, 0.5),
            ("gaussian", [m, s]) => Self::gaussian(*m, *s),
            ("gaussian", [m, s, t]) => Rho0Spec::Gaussian { mean: *m, std: *s, truncation: *t },
            ("two-cluster", []) => Self::two_cluster(1.0, 0.1),
            ("two-cluster", [c, s]) => Self::two_cluster(*c, *s),
            ("two-cluster", [w, m1, s1, m2, s2]) => {
                Rho0Spec::TwoCluster { weight: *w, mean1: *m1, std1: *s1, mean2: *m2, std2: *s2 }
            }
            ("bump", []) => Self::bump(0.0, 1.0),
            ("bump", [c, a]) => Self::bump(*c, *a),
            _ => return Err(invalid(format!("unknown initial density {s:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for Rho0Spec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rho0Spec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `n` i.i.d. initial opinions; opinion `i` comes from its own stream.
pub fn sample_initial(rho0: &Rho0Spec, n: usize, key: StreamKey) -> Result<Vec<f64>> {
    rho0.validate()?;
    Ok((0..n).map(|i| rho0.sample(&mut key.rng(KIND_INITIAL, i as u64))).collect())
}

/// Environmental increments for one replica.
pub fn environment_increments(key: StreamKey, n_steps: usize, dt: f64) -> Vec<f64> {
    increments(&mut key.rng(KIND_ENVIRONMENT, 0), n_steps, dt)
}

// ---------------------------------------------------------------------------
// bundle

/// One shared environmental path, `n` idiosyncratic paths and initial opinions.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    pub key: StreamKey,
    pub dt: f64,
    pub n_steps: usize,
    pub n: usize,
    /// Environmental increments, length `n_steps`.
    pub w: Vec<f64>,
    /// Idiosyncratic increments, step-major: `b[step * n + i]`.
    pub b: Vec<f64>,
    pub initial: Vec<f64>,
}

impl NoiseBundle {
    pub fn generate(seed: u64, n: usize, n_steps: usize, dt: f64, rho0: &Rho0Spec) -> Result<Self> {
        Self::generate_replica(StreamKey::new(seed, 0), n, n_steps, dt, rho0)
    }

    pub fn generate_replica(key: StreamKey, n: usize, n_steps: usize, dt: f64, rho0: &Rho0Spec) -> Result<Self> {
        if n == 0 || n_steps == 0 {
            return Err(invalid(format!("noise bundle needs n >= 1 and n_steps >= 1 (n = {n}, n_steps = {n_steps})")));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        let w = environment_increments(key, n_steps, dt);
        let mut b = vec![0.0; n * n_steps];
        for i in 0..n {
            let path = increments(&mut key.rng(KIND_IDIOSYNCRATIC, i as u64), n_steps, dt);
            for (step, v) in path.into_iter().enumerate() {
                b[step * n + i] = v;
            }
        }
        let initial = sample_initial(rho0, n, key)?;
        Ok(Self { key, dt, n_steps, n, w, b, initial })
    }

    #[inline]
    pub fn b_step(&self, step: usize) -> &[f64] {
        &self.b[step * self.n..(step + 1) * self.n]
    }

    /// Idiosyncratic path of particle `i`.
    pub fn b_path(&self, i: usize) -> Vec<f64> {
        (0..self.n_steps).map(|s| self.b[s * self.n + i]).collect()
    }

    /// `W` at every step boundary, starting from `W_0 = 0`.
    pub fn w_path(&self) -> Vec<f64> {
        let mut acc = 0.0;
        std::iter::once(0.0)
            .chain(self.w.iter().map(|dw| {
                acc += dw;
                acc
            }))
            .collect()
    }

    /// The first `n` particles of this bundle.
    pub fn truncated(&self, n: usize) -> Self {
        assert!(n >= 1 && n <= self.n, "cannot take {n} of {} particles", self.n);
        let mut b = Vec::with_capacity(n * self.n_steps);
        for s in 0..self.n_steps {
            b.extend_from_slice(&self.b_step(s)[..n]);
        }
        Self { n, b, initial: self.initial[..n].to_vec(), w: self.w.clone(), ..*self }
    }

    /// Same path on a grid `factor` times coarser, by summing increments.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n_steps.is_multiple_of(factor) {
            return Err(invalid(format!("coarsening factor {factor} does not divide {} steps", self.n_steps)));
        }
        let steps = self.n_steps / factor;
        let w = self.w.chunks(factor).map(|c| c.iter().sum()).collect();
        let mut b = vec![0.0; steps * self.n];
        for s in 0..self.n_steps {
            let row = &self.b[s * self.n..(s + 1) * self.n];
            for (acc, v) in b[(s / factor) * self.n..(s / factor + 1) * self.n].iter_mut().zip(row) {
                *acc += v;
            }
        }
        Ok(Self { dt: self.dt * factor as f64, n_steps: steps, w, b, ..self.clone() })
    }

    /// Replaces the environmental path, e.g. to condition replicas on one `W`.
    pub fn with_environment(mut self, w: Vec<f64>) -> Result<Self> {
        if w.len() != self.n_steps {
            return Err(invalid(format!("environment path has {} steps, bundle has {}", w.len(), self.n_steps)));
        }
        self.w = w;
        Ok(self)
    }
}
