//! Deterministic reference values for Monte Carlo rows.
//!
//! The nonlinearity always comes from the rule calculus at run time, so a
//! wrong rule-to-equation map shows up as a failed comparison.

use std::sync::Arc;

use branchflow_core::calculus::{psi_series, series_at, target_pde, BranchingRule, Nonlinearity, PsiError, ScalingFamily};
use branchflow_core::data::{BoundaryData, InitialCondition};
use branchflow_core::math;
use branchflow_core::reference::{
    heat_closed_form, heat_quadrature, solve_semilinear, Grid1D, GridSolution, Lateral,
    ReferenceError,
};
use thiserror::Error;

use crate::config::{ConfigError, OracleKind, OracleSpec};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("oracle equation: {0}")]
    Psi(#[from] PsiError),
    #[error("oracle solver: {0}")]
    Reference(#[from] ReferenceError),
}

/// What the oracle is asked to reproduce.
pub struct OracleProblem<'a> {
    pub rule: &'a BranchingRule,
    pub scaling: ScalingFamily,
    pub f: &'a InitialCondition,
    pub g: Option<&'a BoundaryData>,
    pub interval: Option<(f64, f64)>,
    pub horizon: f64,
    /// Points the grid must cover.
    pub xs: &'a [f64],
}

pub enum Oracle {
    Grid { solution: GridSolution, psi: Nonlinearity, initial: Arc<dyn Fn(f64) -> f64 + Send + Sync> },
    Heat { f: InitialCondition, unit: bool },
    None,
}

impl Oracle {
    pub fn value(&self, t: f64, x: f64) -> Option<f64> {
        match self {
            Oracle::Grid { solution, .. } => solution.interpolate(t, x),
            Oracle::Heat { f, unit: false } => heat_closed_form(x, t, f).ok(),
            Oracle::Heat { f, unit: true } => {
                let f = f.clone();
                heat_quadrature(x, t, move |y| -math::expm1(-f.value(y)), 64).ok()
            }
            Oracle::None => None,
        }
    }

    pub fn grid(&self) -> Option<&GridSolution> {
        match self {
            Oracle::Grid { solution, .. } => Some(solution),
            _ => None,
        }
    }
}

/// Map from data of the particle problem to data of the equation the
/// estimator targets. Unit mode has no `beta`.
#[derive(Debug, Clone, Copy)]
enum DataMap {
    Identity,
    Unit,
    Finite(ScalingFamily, f64),
}

impl DataMap {
    fn apply(self, v: f64) -> f64 {
        match self {
            DataMap::Identity => v,
            DataMap::Unit => -math::expm1(-v),
            DataMap::Finite(ScalingFamily::Unit, _) => -math::expm1(-v),
            DataMap::Finite(ScalingFamily::Scaling1, b) => -math::expm1(-b * v) / b,
            DataMap::Finite(ScalingFamily::Scaling2, b) => math::sinh(b * v) / b,
        }
    }
}

/// Builds the oracle for one `beta`.
pub fn build(spec: Option<&OracleSpec>, problem: &OracleProblem<'_>, beta: f64) -> Result<Oracle, OracleError> {
    let Some(spec) = spec else { return Ok(Oracle::None) };
    let unit = problem.scaling == ScalingFamily::Unit;
    let (psi, map) = match spec.kind {
        OracleKind::None => return Ok(Oracle::None),
        OracleKind::Heat => return Ok(Oracle::Heat { f: problem.f.clone(), unit }),
        OracleKind::Limit => {
            let pde = target_pde(problem.rule, problem.scaling)?;
            (pde.numeric(), if unit { DataMap::Unit } else { DataMap::Identity })
        }
        OracleKind::FiniteBeta => {
            let series = psi_series(problem.rule, problem.scaling, spec.order())?;
            let b = if unit { 1.0 } else { beta };
            (series_at(&series, b), DataMap::Finite(problem.scaling, b))
        }
    };
    let (h, dt) = spec.steps()?;
    let f = problem.f.clone();
    let initial: Arc<dyn Fn(f64) -> f64 + Send + Sync> = Arc::new(move |x| map.apply(f.value(x)));

    let (mut grid, lateral) = match problem.interval {
        Some((a, b)) => {
            let g = problem
                .g
                .cloned()
                .ok_or_else(|| ConfigError::field("g", "required with a bounded domain"))?;
            let nx = math::round((b - a) / h).max(2.0) as usize;
            let mapped = BoundaryData::Function(Arc::new(move |t, x| map.apply(g.eval(t, x))));
            (Grid1D::new(a, b, nx, dt, problem.horizon), Lateral::Dirichlet(mapped))
        }
        None => match problem.f {
            InitialCondition::Sine { omega, .. } if *omega != 0.0 => {
                let period = 2.0 * math::PI / omega.abs();
                let nx = math::round(period / h).max(4.0) as usize;
                (Grid1D::new(0.0, period, nx, dt, problem.horizon), Lateral::Periodic)
            }
            _ => {
                let lo = problem.xs.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = problem.xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let (lo, hi) = if lo <= hi { (lo, hi) } else { (0.0, 0.0) };
                (Grid1D::covering(lo, hi, problem.horizon, h, dt), Lateral::FarField)
            }
        },
    };
    grid.save_every = spec.save_every.unwrap_or_else(|| (grid.steps() / 50).max(1));
    let solution = solve_semilinear(&psi, &*initial, &lateral, &grid)?;
    Ok(Oracle::Grid { solution, psi, initial })
}
