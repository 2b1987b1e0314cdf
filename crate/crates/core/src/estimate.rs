//! Exit functionals and Monte Carlo estimators.
//!
//! For a tree started at `delta_x` the exit functional is
//! `V = <beta f, X> = sum_i beta s_i (-1)^{n_i} f^{(n_i)}(x_i)` and
//!
//! - `Unit`:     `u = 1 - E e^{-V}` with `beta = 1`,
//! - `Scaling1`: `u = (1 - E e^{-V}) / beta`,
//! - `Scaling2`: `u = (E e^{V} - E e^{-V}) / (2 beta)`, both means over the same trees.
//!
//! Every per-tree quantity above is linear in `e^{-V}` and `e^{V}`, so the
//! standard error is the sample deviation of the per-tree value over `sqrt(n)`.

use alloc::vec::Vec;

use thiserror::Error;

use crate::calculus::ScalingFamily;
use crate::data::{BoundaryData, InitialCondition, MAX_EVAL_DERIVATIVE};
use crate::engine::{Engine, EngineConfig, EngineError, ExitKind, ExitMeasure, Particle};
use crate::exec::Executor;
use crate::math;
use crate::rng::derive_seed;
use crate::stats::{mean_var, NeumaierSum};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error(transparent)]
    Engine(EngineError),
    #[error("{capped} of {n_trees} trees exceeded the population cap; estimate withheld")]
    CapExceeded { capped: usize, n_trees: usize },
    #[error("derivative order {0} is not supported by the data")]
    DerivOrderUnsupported(u32),
    #[error("a particle left through the lateral boundary but no boundary data was given")]
    MissingBoundaryData,
    #[error("a derivative-marked particle (order {0}) hit the lateral boundary")]
    DerivativeOnBoundary(u32),
    #[error("need at least 2 trees, got {0}")]
    TooFewTrees(usize),
    #[error("no evaluation points")]
    EmptyField,
}

/// `<beta f, X>` with `g` on lateral-boundary atoms.
///
/// Time-boundary atoms see `f`; an atom that left the side of the cylinder
/// after tree time `s` sees `g(T - s, x)` in equation time.
pub fn exit_functional(
    x: &ExitMeasure,
    f: &InitialCondition,
    g: Option<&BoundaryData>,
    beta: f64,
) -> Result<f64, EstimateError> {
    let mut acc = NeumaierSum::new();
    for atom in &x.atoms {
        let value = match atom.kind {
            ExitKind::TimeBoundary => {
                if atom.deriv_order > MAX_EVAL_DERIVATIVE {
                    return Err(EstimateError::DerivOrderUnsupported(atom.deriv_order));
                }
                let d = f.derivative(atom.deriv_order, atom.position);
                if atom.deriv_order % 2 == 1 {
                    -d
                } else {
                    d
                }
            }
            ExitKind::SpaceBoundary => {
                if atom.deriv_order != 0 {
                    return Err(EstimateError::DerivativeOnBoundary(atom.deriv_order));
                }
                let g = g.ok_or(EstimateError::MissingBoundaryData)?;
                g.eval(x.horizon - atom.exit_time, atom.position)
            }
        };
        acc.add(beta * atom.sign.as_f64() * value);
    }
    Ok(acc.value())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    pub mode: ScalingFamily,
    pub n_trees: usize,
    /// Report `-ln(E e^{-V}) / beta` (and its odd counterpart under
    /// `Scaling2`) instead of the linear estimators. Biased by Jensen's
    /// inequality at finite sample size; meant for cross-checks.
    pub plug_in_log: bool,
}

impl EstimatorOptions {
    pub fn new(mode: ScalingFamily, n_trees: usize) -> Self {
        Self {
            mode,
            n_trees,
            plug_in_log: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub estimate: f64,
    pub stderr: f64,
    pub n_trees: usize,
    /// Mass parameter actually used (1 in `Unit` mode).
    pub beta: f64,
    /// `E e^{-V}`.
    pub m_minus: f64,
    pub m_minus_stderr: f64,
    /// `E e^{+V}`.
    pub m_plus: f64,
    pub m_plus_stderr: f64,
    pub dead_tree_fraction: f64,
    pub capped_tree_count: usize,
    pub mean_atoms: f64,
}

/// Per-tree `V` together with bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeValue {
    pub v: f64,
    pub atoms: usize,
}

/// `V` for `n_trees` forests rooted at `roots`, tree `i` on stream `i` of
/// `config.seed`.
pub fn exit_values<E: Executor>(
    config: &EngineConfig,
    roots: &[Particle],
    f: &InitialCondition,
    g: Option<&BoundaryData>,
    n_trees: usize,
    exec: &E,
) -> Result<Vec<TreeValue>, EstimateError> {
    let engine = Engine::new(config.clone()).map_err(EstimateError::Engine)?;
    let beta = config.beta;
    let raw: Vec<Result<TreeValue, EstimateError>> = exec.map_indexed(n_trees, |i| {
        let mut rng = engine.tree_rng(i as u64);
        let x = engine
            .simulate_forest(roots, &mut rng)
            .map_err(EstimateError::Engine)?;
        let v = exit_functional(&x, f, g, beta)?;
        Ok(TreeValue {
            v,
            atoms: x.atoms.len(),
        })
    });

    let mut out = Vec::with_capacity(n_trees);
    let mut capped = 0usize;
    let mut first_err = None;
    for r in raw {
        match r {
            Ok(t) => out.push(t),
            Err(EstimateError::Engine(EngineError::PopulationExceeded { .. })) => capped += 1,
            Err(EstimateError::Engine(EngineError::DerivOrderExceeded { limit })) => {
                first_err.get_or_insert(EstimateError::DerivOrderUnsupported(limit + 1));
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    if capped > 0 {
        return Err(EstimateError::CapExceeded { capped, n_trees });
    }
    Ok(out)
}

/// Combines per-tree values into an estimate under `opts.mode`.
pub fn summarize(values: &[TreeValue], beta: f64, opts: &EstimatorOptions) -> McResult {
    let n = values.len();
    let em = mean_var(values.iter().map(|t| math::exp(-t.v)));
    let ep = mean_var(values.iter().map(|t| math::exp(t.v)));
    let dead = values.iter().filter(|t| t.atoms == 0).count();
    let mut atoms = NeumaierSum::new();
    for t in values {
        atoms.add(t.atoms as f64);
    }

    let per_tree = |t: &TreeValue| match opts.mode {
        ScalingFamily::Unit => -math::expm1(-t.v),
        ScalingFamily::Scaling1 => -math::expm1(-t.v) / beta,
        ScalingFamily::Scaling2 => math::sinh(t.v) / beta,
    };
    let (estimate, stderr) = if opts.plug_in_log {
        match opts.mode {
            ScalingFamily::Unit | ScalingFamily::Scaling1 => {
                (-math::ln(em.mean) / beta, em.stderr() / (em.mean * beta))
            }
            ScalingFamily::Scaling2 => {
                // (ln m+ - ln m-) / (2 beta); the delta method needs the
                // per-tree linearization e^V/m+ - e^{-V}/m-
                let lin = mean_var(
                    values
                        .iter()
                        .map(|t| math::exp(t.v) / ep.mean - math::exp(-t.v) / em.mean),
                );
                (
                    (math::ln(ep.mean) - math::ln(em.mean)) / (2.0 * beta),
                    lin.stderr() / (2.0 * beta),
                )
            }
        }
    } else {
        let y = mean_var(values.iter().map(per_tree));
        (y.mean, y.stderr())
    };

    McResult {
        estimate,
        stderr,
        n_trees: n,
        beta,
        m_minus: em.mean,
        m_minus_stderr: em.stderr(),
        m_plus: ep.mean,
        m_plus_stderr: ep.stderr(),
        dead_tree_fraction: dead as f64 / n as f64,
        capped_tree_count: 0,
        mean_atoms: atoms.value() / n as f64,
    }
}

/// Estimate of `u(T, x)` from `opts.n_trees` independent trees at `x`.
pub fn estimate_point<E: Executor>(
    x: f64,
    config: &EngineConfig,
    f: &InitialCondition,
    g: Option<&BoundaryData>,
    opts: &EstimatorOptions,
    exec: &E,
) -> Result<McResult, EstimateError> {
    if opts.n_trees < 2 {
        return Err(EstimateError::TooFewTrees(opts.n_trees));
    }
    let mut config = config.clone();
    if opts.mode == ScalingFamily::Unit {
        config.beta = 1.0;
    }
    let values = exit_values(&config, &[Particle::root(x)], f, g, opts.n_trees, exec)?;
    Ok(summarize(&values, config.beta, opts))
}

/// Independent [`estimate_point`] per `x`; point `j` uses seed
/// `derive_seed(config.seed, j)`. Per-point failures stay in the table.
pub fn estimate_field<E: Executor>(
    xs: &[f64],
    config: &EngineConfig,
    f: &InitialCondition,
    g: Option<&BoundaryData>,
    opts: &EstimatorOptions,
    exec: &E,
) -> Result<Vec<Result<McResult, EstimateError>>, EstimateError> {
    if xs.is_empty() {
        return Err(EstimateError::EmptyField);
    }
    Ok(xs
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let mut cfg = config.clone();
            cfg.seed = derive_seed(config.seed, j as u64);
            estimate_point(x, &cfg, f, g, opts, exec)
        })
        .collect())
}
