//! Numerical laboratory for the Hegselmann-Krause opinion model with
//! idiosyncratic and environmental noise.
//!
//! * [`kernel`]: the bounded-confidence force and its mollified family.
//! * [`noise`]: reproducible Brownian increments and initial opinions.
//! * [`particles`]: Euler-Maruyama for the N-agent systems.
//! * [`spde`]: per-path solvers for the stochastic Fokker-Planck equation.
//! * [`meanfield`]: the mean-field SDE driven by a solved density.
//! * [`chaos`]: propagation-of-chaos and coupling experiments.
//! * [`harness`]: configuration, orchestration and persistence.

pub mod chaos;
pub mod error;
pub mod grid;
pub mod harness;
pub mod kernel;
pub mod meanfield;
pub mod noise;
pub mod particles;
pub mod quadrature;
pub mod spde;

pub use error::{Error, Result};
