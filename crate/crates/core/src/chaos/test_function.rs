use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFamily {
    /// `exp(-1 / (1 - u^2))`
    SmoothBump,
    /// `(1 - u^2)^4`
    PolyBump,
    /// 1 on `|u| <= 1/2`, smoothstep down to 0 at `|u| = 1`.
    Plateau,
}

/// Compactly supported observable `phi((x - center) / half_width)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub family: TestFamily,
    pub center: f64,
    pub half_width: f64,
}

fn smooth_gate(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

/// `S(s) = f(s) / (f(s) + f(1 - s))` and `S'(s)`, with `f(s) = exp(-1/s)`.
fn smoothstep(s: f64) -> (f64, f64) {
    if s <= 0.0 {
        return (0.0, 0.0);
    }
    if s >= 1.0 {
        return (1.0, 0.0);
    }
    let (a, b) = (smooth_gate(s), smooth_gate(1.0 - s));
    let (da, db) = (a / (s * s), b / ((1.0 - s) * (1.0 - s)));
    let d = a + b;
    (a / d, (da * b + a * db) / (d * d))
}

impl TestFunction {
    pub fn new(family: TestFamily, center: f64, half_width: f64) -> Self {
        assert!(half_width > 0.0, "test function needs a positive half-width");
        Self { family, center, half_width }
    }

    /// The three observables used by the chaos experiments.
    pub fn builtin() -> [TestFunction; 3] {
        [
            TestFunction::new(TestFamily::SmoothBump, 0.0, 1.5),
            TestFunction::new(TestFamily::PolyBump, 1.0, 1.0),
            TestFunction::new(TestFamily::Plateau, -1.0, 1.5),
        ]
    }

    pub fn id(&self) -> String {
        let name = match self.family {
            TestFamily::SmoothBump => "smooth",
            TestFamily::PolyBump => "poly",
            TestFamily::Plateau => "plateau",
        };
        format!("{name}@{}:{}", self.center, self.half_width)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.center - self.half_width, self.center + self.half_width)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.half_width;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        match self.family {
            TestFamily::SmoothBump => (-1.0 / (1.0 - u * u)).exp(),
            TestFamily::PolyBump => (1.0 - u * u).powi(4),
            TestFamily::Plateau => smoothstep(2.0 * (1.0 - u.abs())).0,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let h = self.half_width;
        let u = (x - self.center) / h;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let q = 1.0 - u * u;
        match self.family {
            TestFamily::SmoothBump => (-1.0 / q).exp() * (-2.0 * u / (q * q)) / h,
            TestFamily::PolyBump => -8.0 * u * q.powi(3) / h,
            TestFamily::Plateau => -2.0 * u.signum() * smoothstep(2.0 * (1.0 - u.abs())).1 / h,
        }
    }

    /// `(sup |phi|, sup |phi'|)` by dense sampling.
    pub fn sup_norms(&self) -> (f64, f64) {
        let (lo, hi) = self.support();
        let n = 20_000;
        (0..=n).fold((0.0f64, 0.0f64), |(a, b), i| {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            (a.max(self.eval(x).abs()), b.max(self.derivative(x).abs()))
        })
    }

    pub fn c1_norm(&self) -> f64 {
        let (a, b) = self.sup_norms();
        a + b
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// `(1/N) sum_i phi(x_i)`.
pub fn empirical_pairing(positions: &[f64], phi: &TestFunction) -> f64 {
    positions.iter().map(|&x| phi.eval(x)).sum::<f64>() / positions.len() as f64
}
