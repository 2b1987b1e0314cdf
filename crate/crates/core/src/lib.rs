//! Stochastic solutions of semilinear parabolic equations
//! `u_t = 1/2 u_xx - psi(u, u_x)` from branching Brownian motion whose
//! particles carry a sign and a derivative order.
//!
//! The crate is `no_std` (with `alloc`). Parallelism is injected through the
//! [`exec::Executor`] trait; the `branchflow` crate supplies a thread pool.
//!
//! Layout:
//! - [`calculus`]: exact rule -> nonlinearity calculus over truncated series in beta.
//! - [`engine`]: the marked branching particle simulation.
//! - [`estimate`]: exit functionals and Monte Carlo estimators.
//! - [`reference`]: closed-form heat solutions, a Crank-Nicolson solver and the
//!   integral-equation residual check.
//! - [`lemma`]: Monte Carlo check of the renewal identity behind the integral equation.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod calculus;
pub mod data;
pub mod engine;
pub mod estimate;
pub mod exec;
pub mod lemma;
pub mod math;
pub mod reference;
pub mod rng;
pub mod stats;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use calculus::{
    psi_limit, psi_series, rule_from_power, target_pde, validate_rule, BranchingRule, Descriptor,
    FormalSeries, Intensity, MarkTransition, Monomial, PdeDescriptor, RuleError, ScalingFamily,
    Sign,
};
pub use data::{BoundaryData, InitialCondition};
pub use engine::{
    Domain, Engine, EngineConfig, EngineError, ExitAtom, ExitKind, ExitMeasure, Particle,
};
pub use estimate::{
    estimate_field, estimate_point, exit_functional, EstimateError, EstimatorOptions, McResult,
};
pub use exec::{Executor, Sequential};
