//! Deterministic oracles: the heat semigroup, a semilinear finite-difference
//! solver and the integral-equation residual.

pub mod fd;
pub mod heat;
pub mod residual;

use thiserror::Error;

pub use fd::{
    cauchy_padding, solve_semilinear, transformed_initial, Grid1D, GridSolution, Lateral,
};
pub use heat::{heat_closed_form, heat_quadrature, GaussHermite};
pub use residual::{integral_residual, ResidualOptions, ResidualPoint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReferenceError {
    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("solution blew up at t = {t}: max |u| = {max_abs}")]
    BlowUpDetected { t: f64, max_abs: f64 },
    #[error("dt / h^2 = {ratio} exceeds the allowed {max}")]
    StabilityViolation { ratio: f64, max: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(&'static str),
    #[error("({t}, {x}) lies outside the grid")]
    OutsideGrid { t: f64, x: f64 },
    #[error("need at least 2 paths, got {0}")]
    TooFewPaths(usize),
}
