//! Exact symbolic map from a branching rule and a scaling family to the
//! nonlinearity of the equation the particle system solves.

pub mod psi;
pub mod rule;
pub mod series;

pub use psi::{
    psi_limit, psi_series, series_at, target_pde, Nonlinearity, PdeDescriptor, PsiError, ScalingFamily,
    DEFAULT_ORDER,
};
pub use rule::{
    binomial, power_weight, rule_from_power, validate_rule, BranchingRule, Descriptor, Intensity,
    MarkTransition, RuleError, Sign, ValidationReport,
};
pub use series::{rat, Exponent, FormalSeries, Monomial, Rational, SeriesError};
