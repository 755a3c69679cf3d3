//! Experiment configs, seed discipline and run orchestration.
//!
//! A config is a TOML file with flat top-level keys plus optional `[grid]` and
//! `[chaos]` tables. Every key has a default, so `experiment = "simulate"` and
//! `n = 100` already make a complete config.

mod run;
mod validate;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use run::{run, run_in_pool, RunSummary};
pub use validate::{validation_suite, ValidationCheck};

use crate::chaos::{ChaosSetup, KernelMode, TestFunction};
use crate::error::{Error, Result};
use crate::kernel::{Interaction, KernelSpec, RegularizedKernel};
use crate::noise::Rho0Spec;
use crate::spde::{checkpoint_steps, step_count, Scheme, SigmaSpec};

/// Environment variable that overrides the config seed (a CLI flag wins over it).
pub const SEED_ENV: &str = "HK_CHAOS_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Spde,
    ChaosWeak,
    ChaosStrong,
    DensityDistance,
    Validate,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Spde => "spde",
            ExperimentKind::ChaosWeak => "chaos-weak",
            ExperimentKind::ChaosStrong => "chaos-strong",
            ExperimentKind::DensityDistance => "density-distance",
            ExperimentKind::Validate => "validate",
        }
    }

    pub fn is_chaos(&self) -> bool {
        matches!(self, ExperimentKind::ChaosWeak | ExperimentKind::ChaosStrong | ExperimentKind::DensityDistance)
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "simulate" => ExperimentKind::Simulate,
            "spde" => ExperimentKind::Spde,
            "chaos-weak" => ExperimentKind::ChaosWeak,
            "chaos-strong" => ExperimentKind::ChaosStrong,
            "density-distance" => ExperimentKind::DensityDistance,
            "validate" => ExperimentKind::Validate,
            _ => return Err(Error::Config(format!("unknown experiment {s:?}"))),
        })
    }
}

/// Which interaction the particles (simulate) or the density (spde) use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelChoice {
    Exact,
    Reg,
    None,
}

impl FromStr for KernelChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(KernelChoice::Exact),
            "reg" | "regularized" => Ok(KernelChoice::Reg),
            "none" => Ok(KernelChoice::None),
            _ => Err(Error::InvalidParameter(format!("unknown kernel {s:?} (expected exact|reg|none)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dx: f64,
    /// Explicit domain; derived from the initial support and the noise when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x1: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { dx: 0.02, x0: None, x1: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChaosConfig {
    pub sizes: Vec<usize>,
    pub taus: Vec<f64>,
    pub control: bool,
    pub fix_w: bool,
    pub kernel_mode: KernelMode,
    pub phis: Vec<TestFunction>,
    /// Front factor of the bound overlay; fitted to the data when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_front: Option<f64>,
}

impl Default for ChaosConfig {
    fn default() -> Self {
        Self {
            sizes: vec![50, 100, 200, 400],
            taus: vec![0.2, 0.1, 0.05],
            control: true,
            fix_w: false,
            kernel_mode: KernelMode::Standard,
            phis: TestFunction::builtin().to_vec(),
            c_front: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(with = "seed_format")]
    pub seed: u64,
    /// Particle count for `simulate`.
    pub n: usize,
    /// Replica count M.
    pub replicas: usize,
    pub radius: f64,
    pub tau: f64,
    pub sigma: SigmaSpec,
    pub nu: f64,
    pub t_end: f64,
    pub dt: f64,
    pub rho0: Rho0Spec,
    /// Output times; the horizon is always added.
    pub checkpoints: Vec<f64>,
    pub kernel: KernelChoice,
    pub scheme: Scheme,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub grid: GridConfig,
    pub chaos: ChaosConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Simulate,
            seed: 42,
            n: 100,
            replicas: 200,
            radius: 1.0,
            tau: 0.5,
            sigma: SigmaSpec::Constant(1.0),
            nu: 0.25,
            t_end: 0.5,
            dt: 1e-3,
            rho0: Rho0Spec::two_cluster(1.0, 0.1),
            checkpoints: Vec::new(),
            kernel: KernelChoice::Reg,
            scheme: Scheme::Frame,
            out: None,
            grid: GridConfig::default(),
            chaos: ChaosConfig::default(),
        }
    }
}

/// TOML integers are signed, so seeds above `i64::MAX` are written as strings.
mod seed_format {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.collect_str(seed),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Int(v) => u64::try_from(v).map_err(|_| de::Error::custom(format!("seed must be >= 0, got {v}"))),
            Raw::Text(t) => t.trim().parse().map_err(|_| de::Error::custom(format!("seed {t:?} is not an unsigned integer"))),
        }
    }
}

fn config_error(e: Error) -> Error {
    match e {
        Error::InvalidParameter(m) | Error::GridTooCoarse(m) => Error::Config(m),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Semantic checks, reported as config errors.
    pub fn validate(&self) -> Result<()> {
        let check = || -> Result<()> {
            let n_steps = step_count(self.t_end, self.dt)?;
            checkpoint_steps(&self.checkpoints, self.dt, n_steps)?;
            KernelSpec::new(self.radius)?;
            self.rho0.validate()?;
            if self.experiment != ExperimentKind::Simulate {
                self.sigma.validate()?;
            }
            if !(self.nu >= 0.0) || !self.nu.is_finite() {
                return Err(Error::Config(format!("nu must be >= 0, got {}", self.nu)));
            }
            if !(self.tau > 0.0) {
                return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
            }
            if !(self.grid.dx > 0.0) {
                return Err(Error::Config(format!("grid.dx must be positive, got {}", self.grid.dx)));
            }
            if let (Some(a), Some(b)) = (self.grid.x0, self.grid.x1) {
                if !(b > a) {
                    return Err(Error::Config(format!("grid needs x0 < x1, got [{a}, {b}]")));
                }
            }
            if self.grid.x0.is_some() != self.grid.x1.is_some() {
                return Err(Error::Config("grid.x0 and grid.x1 must be given together".into()));
            }
            if self.n == 0 || self.replicas == 0 {
                return Err(Error::Config("n and replicas must be positive".into()));
            }
            if self.experiment.is_chaos() {
                self.chaos_setup()?.validate()?;
            }
            Ok(())
        };
        check().map_err(config_error)
    }

    /// Checkpoint times including the horizon.
    pub fn checkpoint_times(&self) -> Vec<f64> {
        let mut t = self.checkpoints.clone();
        t.push(self.t_end);
        t
    }

    pub fn interaction(&self, dx: f64) -> Result<Interaction> {
        Ok(match self.kernel {
            KernelChoice::Exact => Interaction::Exact(KernelSpec::new(self.radius)?),
            KernelChoice::Reg => {
                Interaction::Regularized(RegularizedKernel::build(self.radius, self.tau, dx.min(self.tau / 8.0))?.into())
            }
            KernelChoice::None => Interaction::None,
        })
    }

    pub fn chaos_setup(&self) -> Result<ChaosSetup> {
        Ok(ChaosSetup {
            seed: self.seed,
            radius: self.radius,
            tau: self.tau,
            sigma: self.sigma,
            nu: self.nu,
            t_end: self.t_end,
            dt: self.dt,
            rho0: self.rho0,
            sizes: self.chaos.sizes.clone(),
            replicas: self.replicas,
            checkpoints: self.checkpoints.clone(),
            dx: self.grid.dx,
            phis: self.chaos.phis.clone(),
            kernel: self.chaos.kernel_mode,
            control: self.chaos.control,
            fix_w: self.chaos.fix_w,
            taus: self.chaos.taus.clone(),
        })
    }
}

/// Reads, parses and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    ExperimentConfig::from_toml_str(&text)
}

/// Seed precedence: explicit flag, then `HK_CHAOS_SEED`, then the config value.
pub fn resolve_seed(config_seed: u64, flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(config_seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str("experiment = \"simulate\"\nn = 100\n").unwrap();
        assert_eq!(cfg.n, 100);
        assert_eq!(cfg.radius, 1.0);
        assert_eq!(cfg.tau, 0.5);
        assert_eq!(cfg.sigma, SigmaSpec::Constant(1.0));
        assert_eq!(cfg.nu, 0.25);
        assert_eq!(cfg.t_end, 0.5);
        assert_eq!(cfg.dt, 1e-3);
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn dt_must_divide_horizon() {
        let err = ExperimentConfig::from_toml_str("experiment = \"simulate\"\ndt = 0.3\nt_end = 0.5\n").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("divide")), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ExperimentConfig::from_toml_str("experiment = \"simulate\"\nn = [\n").unwrap_err();
        assert!(err.to_string().contains("line 2") || err.to_string().contains("2:"), "{err}");
        assert!(ExperimentConfig::from_toml_str("bogus = 1\n").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = "experiment = \"chaos-weak\"\nsigma = \"bump:0.6,0.4,1.5\"\nrho0 = \"gaussian:0,0.5\"\n[grid]\ndx = 0.01\n[chaos]\nsizes = [10, 20, 40]\n";
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.chaos.sizes, vec![10, 20, 40]);
    }

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(42, Some(7)).unwrap(), 7);
        // the env override is exercised in the CLI integration tests
    }
}
