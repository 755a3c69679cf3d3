//! Diffusion coefficient families and the diffusion-dominance condition.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::noise::parse_numbers;

/// Time-independent diffusion coefficient.
///
/// Text form: `const:A` or `bump:A,B,L` for `A + B (1 - (x/L)^2)^4` on `|x| <= L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaSpec {
    Constant(f64),
    Bump { base: f64, amplitude: f64, half_width: f64 },
}

impl SigmaSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SigmaSpec::Constant(a) => a > 0.0 && a.is_finite(),
            SigmaSpec::Bump { base, amplitude, half_width } => {
                base > 0.0 && base + amplitude > 0.0 && half_width > 0.0 && amplitude.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("diffusion coefficient {self} must stay positive")))
        }
    }

    /// Like [`validate`](Self::validate) but admits `const:0` (deterministic particle runs).
    pub fn validate_nonnegative(&self) -> Result<()> {
        match *self {
            SigmaSpec::Constant(0.0) => Ok(()),
            _ => self.validate(),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            SigmaSpec::Constant(a) => a,
            SigmaSpec::Bump { base, amplitude, half_width } => {
                let u = x / half_width;
                if u.abs() >= 1.0 {
                    base
                } else {
                    base + amplitude * (1.0 - u * u).powi(4)
                }
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, SigmaSpec::Constant(_))
    }

    /// `k`-th derivative for `k = 1, 2, 3`.
    pub fn derivative(&self, x: f64, k: u32) -> f64 {
        let SigmaSpec::Bump { amplitude, half_width: l, .. } = *self else {
            return 0.0;
        };
        let u = x / l;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let w = 1.0 - u * u;
        let d = match k {
            1 => -8.0 * u * w.powi(3),
            2 => -8.0 * w.powi(3) + 48.0 * u * u * w * w,
            3 => 144.0 * u * w * w - 192.0 * u.powi(3) * w,
            _ => panic!("derivative order {k} not supported"),
        };
        amplitude * d / l.powi(k as i32)
    }

    fn dense_sup(&self, f: impl Fn(f64) -> f64) -> f64 {
        match *self {
            SigmaSpec::Constant(_) => f(0.0).abs(),
            SigmaSpec::Bump { half_width, .. } => {
                (0..=20_000).map(|i| f(-half_width + i as f64 * half_width / 10_000.0).abs()).fold(0.0, f64::max)
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            SigmaSpec::Constant(a) => a,
            SigmaSpec::Bump { base, amplitude, .. } => base.max(base + amplitude),
        }
    }

    /// Ellipticity `lambda = inf sigma^2`.
    pub fn lambda(&self) -> f64 {
        match *self {
            SigmaSpec::Constant(a) => a * a,
            SigmaSpec::Bump { base, amplitude, .. } => base.min(base + amplitude).powi(2),
        }
    }

    /// Largest sup-norm among the first three derivatives.
    pub fn big_lambda(&self) -> f64 {
        (1..=3).map(|k| self.dense_sup(|x| self.derivative(x, k))).fold(0.0, f64::max)
    }

    /// `sup |d/dx sigma^2|`.
    pub fn sup_sq_derivative(&self) -> f64 {
        self.dense_sup(|x| 2.0 * self.eval(x) * self.derivative(x, 1))
    }

    /// Half-width of the support of `sigma'` (zero for constant sigma).
    pub fn derivative_support(&self) -> f64 {
        match *self {
            SigmaSpec::Constant(_) => 0.0,
            SigmaSpec::Bump { half_width, .. } => half_width,
        }
    }
}

impl fmt::Display for SigmaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SigmaSpec::Constant(a) => write!(f, "const:{a}"),
            SigmaSpec::Bump { base, amplitude, half_width } => write!(f, "bump:{base},{amplitude},{half_width}"),
        }
    }
}

impl FromStr for SigmaSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (family, args) =
            s.split_once(':').ok_or_else(|| invalid(format!("diffusion coefficient {s:?} needs FAMILY:ARGS")))?;
        let spec = match (family.trim(), parse_numbers(args)?.as_slice()) {
            ("const", [a]) => SigmaSpec::Constant(*a),
            ("bump", [a, b, l]) => SigmaSpec::Bump { base: *a, amplitude: *b, half_width: *l },
            _ => return Err(invalid(format!("unknown diffusion coefficient {s:?}"))),
        };
        spec.validate_nonnegative()?;
        Ok(spec)
    }
}

impl Serialize for SigmaSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SigmaSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// `C_GNS = (4 pi^2 / 9)^{-1/4}`, the one-dimensional Gagliardo-Nirenberg-Sobolev constant.
pub fn c_gns() -> f64 {
    (4.0 * std::f64::consts::PI.powi(2) / 9.0).powf(-0.25)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlobalCondition {
    pub holds: bool,
    /// `rhs - lhs`; positive when the condition holds.
    pub margin: f64,
    pub lhs: f64,
    pub rhs: f64,
}

/// Diffusion-dominance condition for global existence with L2 decay.
///
/// General form: `2 L^2 s + (C^4 ||k||_1^2 + 4 L^4 s^2)^{1/2} <= lambda` with
/// `s = sup |(sigma^2)'|` and `[-L, L]` the support of `sigma'`. For constant
/// sigma the condition is taken in its reduced form `C^2 ||k||_1 <= sigma`.
pub fn check_global_existence_condition(sigma: &SigmaSpec, kernel_l1: f64) -> GlobalCondition {
    let c = c_gns();
    let (lhs, rhs) = match *sigma {
        SigmaSpec::Constant(a) => (c * c * kernel_l1, a),
        SigmaSpec::Bump { .. } => {
            let l = sigma.derivative_support();
            let s = sigma.sup_sq_derivative();
            let lhs = 2.0 * l * l * s + (c.powi(4) * kernel_l1 * kernel_l1 + 4.0 * l.powi(4) * s * s).sqrt();
            (lhs, sigma.lambda())
        }
    };
    GlobalCondition { holds: lhs <= rhs, margin: rhs - lhs, lhs, rhs }
}
