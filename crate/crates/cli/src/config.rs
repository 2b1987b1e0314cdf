//! Experiment configuration: one TOML file per run.
//!
//! Every numeric tolerance used by an acceptance predicate lives in the
//! `[acceptance]` table and has no default. Paths inside the file are
//! relative to the file's directory.

use std::fmt;
use std::path::{Path, PathBuf};

use branchflow_core::calculus::{BranchingRule, RuleError, ScalingFamily, DEFAULT_ORDER};
use branchflow_core::data::{BoundaryData, InitialCondition};
use serde::Deserialize;
use thiserror::Error;

use crate::rules::{self, IntensityText, RationalText, RuleText, TransitionText};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("config field `{field}`: rule rejected: {error}")]
    Rule { field: String, error: RuleError },
}

impl ConfigError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Field { field: field.into(), message: message.into() }
    }

    pub fn parse(path: &Path, err: toml::de::Error) -> Self {
        let text = std::fs::read_to_string(path).unwrap_or_default();
        Self::parse_text(&path.display().to_string(), &text, err)
    }

    fn parse_text(path: &str, text: &str, err: toml::de::Error) -> Self {
        let line = err
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        ConfigError::Parse { path: path.to_string(), line, message: err.message().trim().to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Point,
    Field,
    ConvergeBeta,
    ConvergeN,
    Psi,
    ValidateRule,
    Lemma,
    Oracle,
    Residual,
}

impl Mode {
    pub fn is_monte_carlo(self) -> bool {
        matches!(self, Mode::Point | Mode::Field | Mode::ConvergeBeta | Mode::ConvergeN)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Point => "point",
            Mode::Field => "field",
            Mode::ConvergeBeta => "converge-beta",
            Mode::ConvergeN => "converge-n",
            Mode::Psi => "psi",
            Mode::ValidateRule => "validate-rule",
            Mode::Lemma => "lemma",
            Mode::Oracle => "oracle",
            Mode::Residual => "residual",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingName {
    Scaling1,
    Scaling2,
    Unit,
}

impl From<ScalingName> for ScalingFamily {
    fn from(s: ScalingName) -> Self {
        match s {
            ScalingName::Scaling1 => ScalingFamily::Scaling1,
            ScalingName::Scaling2 => ScalingFamily::Scaling2,
            ScalingName::Unit => ScalingFamily::Unit,
        }
    }
}

/// `rule = "kpp"` or a `[rule]` table.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RuleField {
    Name(String),
    Table(RuleSpec),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub builtin: Option<String>,
    pub file: Option<PathBuf>,
    pub alpha: Option<RationalText>,
    pub truncation: Option<u32>,
    pub intensity: Option<IntensityText>,
    pub transitions: Option<Vec<TransitionText>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSpec {
    Gaussian { amplitude: f64, sigma: f64, center: f64 },
    Sine { amplitude: f64, omega: f64 },
    Polynomial { coeffs: Vec<f64> },
    Constant { value: f64 },
}

impl DataSpec {
    pub fn to_initial(&self) -> InitialCondition {
        match self {
            DataSpec::Gaussian { amplitude, sigma, center } => InitialCondition::gaussian(*amplitude, *sigma, *center),
            DataSpec::Sine { amplitude, omega } => InitialCondition::sine(*amplitude, *omega),
            DataSpec::Polynomial { coeffs } => InitialCondition::Polynomial { coeffs: coeffs.clone() },
            DataSpec::Constant { value } => InitialCondition::Constant(*value),
        }
    }

    fn check(&self, field: &str) -> Result<(), ConfigError> {
        match self {
            DataSpec::Gaussian { sigma, .. } if !(*sigma > 0.0) => {
                Err(ConfigError::field(format!("{field}.sigma"), "must be positive"))
            }
            DataSpec::Polynomial { coeffs } if coeffs.is_empty() => {
                Err(ConfigError::field(format!("{field}.coeffs"), "must not be empty"))
            }
            _ => Ok(()),
        }
    }
}

/// A single point, a list, or `{ start, stop, step }` (inclusive).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum XSpec {
    One(f64),
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl XSpec {
    pub fn points(&self, field: &str) -> Result<Vec<f64>, ConfigError> {
        let xs = match self {
            XSpec::One(x) => vec![*x],
            XSpec::List(v) => v.clone(),
            XSpec::Range { start, stop, step } => {
                if !(*step > 0.0) || stop < start {
                    return Err(ConfigError::field(field, "range needs step > 0 and stop >= start"));
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
                (0..n).map(|i| start + i as f64 * step).collect()
            }
        };
        if xs.is_empty() {
            return Err(ConfigError::field(field, "needs at least one point"));
        }
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(ConfigError::field(field, "points must be finite"));
        }
        Ok(xs)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    /// `[a, b]`; omitted for the whole line.
    pub interval: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSpec {
    pub max_population: Option<usize>,
    pub max_deriv_order: Option<u32>,
    pub boundary_step: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    #[serde(default)]
    pub plug_in_log: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    /// Finite differences for the limiting equation from `target_pde`.
    Limit,
    /// Finite differences for `psi_beta` at each `beta` with transformed data.
    FiniteBeta,
    /// The heat semigroup; only meaningful when `psi = 0`.
    Heat,
    None,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub kind: OracleKind,
    pub h: Option<f64>,
    pub dt: Option<f64>,
    /// Truncation order of the `beta` series for `finite-beta`.
    pub order: Option<u32>,
    /// Saved time levels for the grid CSV: every n-th step.
    pub save_every: Option<usize>,
}

impl OracleSpec {
    pub fn order(&self) -> u32 {
        self.order.unwrap_or(DEFAULT_ORDER)
    }

    pub fn steps(&self) -> Result<(f64, f64), ConfigError> {
        let h = self.h.ok_or_else(|| ConfigError::field("oracle.h", "required for a finite-difference oracle"))?;
        let dt = self.dt.ok_or_else(|| ConfigError::field("oracle.dt", "required for a finite-difference oracle"))?;
        if !(h > 0.0) {
            return Err(ConfigError::field("oracle.h", "must be positive"));
        }
        if !(dt > 0.0) {
            return Err(ConfigError::field("oracle.dt", "must be positive"));
        }
        Ok((h, dt))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceSpec {
    /// Row passes when `abs_error <= max(abs_tol, se_multiplier * stderr)`.
    pub abs_tol: f64,
    pub se_multiplier: f64,
    /// Additionally require `abs_error <= rel_tol * |oracle|`.
    pub rel_tol: Option<f64>,
    /// Fitted log-log slope of error against `beta` must lie in this range.
    pub slope_range: Option<[f64; 2]>,
    /// Error must not increase as `beta` decreases, beyond
    /// `se_multiplier` combined standard errors.
    pub monotone: Option<bool>,
    /// Residual mode: `|residual| <= max(max_residual, se_multiplier * stderr)`.
    pub max_residual: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalSpec {
    /// `e^{-lambda t}`.
    pub lambda: Option<f64>,
    /// `sum coeffs[p] t^p`.
    pub coeffs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaSpec {
    pub k: Vec<f64>,
    pub horizon: f64,
    pub g: DataSpec,
    pub phi_space: DataSpec,
    pub phi_time: TemporalSpec,
    /// `[x, t]` pairs.
    pub probes: Vec<[f64; 2]>,
    pub h: f64,
    pub dt: f64,
    pub grid_paths: usize,
    pub outer_paths: usize,
    pub batches: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualSpec {
    pub n_paths: usize,
    pub dt: f64,
    pub x: XSpec,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub rule: Option<RuleField>,
    pub scaling: Option<ScalingName>,
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default)]
    pub n_trees: Vec<usize>,
    pub t: Option<f64>,
    pub x: Option<XSpec>,
    pub f: Option<DataSpec>,
    pub g: Option<DataSpec>,
    pub domain: Option<DomainSpec>,
    #[serde(default)]
    pub engine: EngineSpec,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    pub oracle: Option<OracleSpec>,
    pub acceptance: Option<AcceptanceSpec>,
    pub lemma: Option<LemmaSpec>,
    pub residual: Option<ResidualSpec>,
}

/// A parsed config plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub spec: ExperimentSpec,
    pub text: String,
    pub base_dir: PathBuf,
}

pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::field("--config", format!("cannot read {}: {e}", path.display())))?;
    let spec = parse(&path.display().to_string(), &text)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { spec, text, base_dir })
}

pub fn parse(origin: &str, text: &str) -> Result<ExperimentSpec, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::parse_text(origin, text, e))
}

/// Natural scaling of each built-in rule: the one under which it has a limit.
fn builtin_scaling(name: &str) -> Option<ScalingFamily> {
    match name {
        "kpp" => Some(ScalingFamily::Unit),
        "power-alpha" | "eq3.3" | "derivative-binary" => Some(ScalingFamily::Scaling1),
        "eq3.11" | "signed-cubic" => Some(ScalingFamily::Scaling2),
        _ => None,
    }
}

/// The rule and scaling a spec refers to.
#[derive(Debug, Clone)]
pub struct ResolvedRule {
    pub rule: BranchingRule,
    pub label: String,
    pub scaling: ScalingFamily,
}

impl ExperimentSpec {
    pub fn resolve_rule(&self, base_dir: &Path) -> Result<ResolvedRule, ConfigError> {
        let field = self.rule.as_ref().ok_or_else(|| ConfigError::field("rule", "required"))?;
        let table = match field {
            RuleField::Name(name) => RuleSpec { builtin: Some(name.clone()), ..RuleSpec::default() },
            RuleField::Table(t) => t.clone(),
        };
        let sources = [table.builtin.is_some(), table.file.is_some(), table.transitions.is_some()]
            .iter()
            .filter(|b| **b)
            .count();
        if sources != 1 {
            return Err(ConfigError::field(
                "rule",
                "give exactly one of `builtin`, `file`, or inline `intensity` + `transitions`",
            ));
        }
        let (rule, label, natural) = if let Some(name) = &table.builtin {
            let alpha = table
                .alpha
                .as_ref()
                .map(|a| a.to_rational().map_err(|m| ConfigError::field("rule.alpha", m)))
                .transpose()?;
            let rule = rules::builtin(name, alpha.as_ref(), table.truncation)?;
            let label = match &alpha {
                Some(a) if name == "power-alpha" => format!("power-alpha(alpha={a})"),
                _ => name.clone(),
            };
            (rule, label, builtin_scaling(name))
        } else if let Some(file) = &table.file {
            let path = base_dir.join(file);
            (rules::load_rule_file(&path)?, path.display().to_string(), None)
        } else {
            let intensity = table
                .intensity
                .clone()
                .ok_or_else(|| ConfigError::field("rule.intensity", "required with inline transitions"))?;
            let text = RuleText { intensity, transitions: table.transitions.clone().unwrap_or_default() };
            (text.to_rule()?, "inline".to_string(), None)
        };
        let scaling = self
            .scaling
            .map(ScalingFamily::from)
            .or(natural)
            .unwrap_or(ScalingFamily::Scaling1);
        Ok(ResolvedRule { rule, label, scaling })
    }

    pub fn t(&self) -> Result<f64, ConfigError> {
        let t = self.t.ok_or_else(|| ConfigError::field("t", "required"))?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(ConfigError::field("t", "must be positive"));
        }
        Ok(t)
    }

    pub fn f(&self) -> Result<InitialCondition, ConfigError> {
        let f = self.f.as_ref().ok_or_else(|| ConfigError::field("f", "required"))?;
        f.check("f")?;
        Ok(f.to_initial())
    }

    pub fn g(&self) -> Result<Option<BoundaryData>, ConfigError> {
        match &self.g {
            None => Ok(None),
            Some(DataSpec::Constant { value }) => Ok(Some(BoundaryData::Constant(*value))),
            Some(g) => {
                g.check("g")?;
                Ok(Some(BoundaryData::Spatial(g.to_initial())))
            }
        }
    }

    pub fn xs(&self) -> Result<Vec<f64>, ConfigError> {
        self.x.as_ref().ok_or_else(|| ConfigError::field("x", "required"))?.points("x")
    }

    pub fn interval(&self) -> Result<Option<(f64, f64)>, ConfigError> {
        match self.domain.as_ref().and_then(|d| d.interval) {
            None => Ok(None),
            Some([a, b]) if a < b && a.is_finite() && b.is_finite() => Ok(Some((a, b))),
            Some(_) => Err(ConfigError::field("domain.interval", "needs finite a < b")),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Checks that apply before any computation for `mode`.
    pub fn validate(&self, mode: Mode) -> Result<(), ConfigError> {
        if mode.is_monte_carlo() {
            if self.beta.is_empty() {
                return Err(ConfigError::field("beta", "Monte Carlo modes need at least one beta"));
            }
            if self.n_trees.is_empty() {
                return Err(ConfigError::field("n_trees", "Monte Carlo modes need at least one n_trees"));
            }
            if let Some(i) = self.beta.iter().position(|b| !(*b > 0.0 && b.is_finite())) {
                return Err(ConfigError::field(format!("beta[{i}]"), "must be positive"));
            }
            if let Some(i) = self.n_trees.iter().position(|n| *n < 2) {
                return Err(ConfigError::field(format!("n_trees[{i}]"), "needs at least 2 trees"));
            }
            self.t()?;
            self.f()?;
            self.g()?;
            let xs = self.xs()?;
            if mode == Mode::Point && xs.len() != 1 {
                return Err(ConfigError::field("x", "point mode takes exactly one x"));
            }
            if let Some((a, b)) = self.interval()? {
                if let Some(x) = xs.iter().find(|x| !(**x > a && **x < b)) {
                    return Err(ConfigError::field("x", format!("{x} is not inside the interval ({a}, {b})")));
                }
                if self.g.is_none() {
                    return Err(ConfigError::field("g", "required with a bounded domain"));
                }
            }
            if let Some(s) = self.engine.boundary_step {
                if !(s > 0.0) {
                    return Err(ConfigError::field("engine.boundary_step", "must be positive"));
                }
            }
        }
        match mode {
            Mode::ConvergeBeta => {
                if self.beta.len() < 3 {
                    return Err(ConfigError::field(
                        "beta",
                        format!("converge-beta needs at least 3 values, got {}", self.beta.len()),
                    ));
                }
                if self.beta.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(ConfigError::field("beta", "converge-beta needs strictly descending values"));
                }
                if self.n_trees.len() != 1 {
                    return Err(ConfigError::field("n_trees", "converge-beta runs at one fixed n_trees"));
                }
                self.require_oracle()?;
            }
            Mode::ConvergeN => {
                if self.n_trees.len() < 3 {
                    return Err(ConfigError::field(
                        "n_trees",
                        format!("converge-n needs at least 3 values, got {}", self.n_trees.len()),
                    ));
                }
                if self.n_trees.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(ConfigError::field("n_trees", "converge-n needs strictly ascending values"));
                }
                if self.beta.len() != 1 {
                    return Err(ConfigError::field("beta", "converge-n runs at one fixed beta"));
                }
                self.require_oracle()?;
            }
            Mode::Oracle => {
                self.t()?;
                self.f()?;
                self.xs()?;
                self.require_oracle()?;
            }
            Mode::Residual => {
                self.t()?;
                self.f()?;
                let r = self.residual.as_ref().ok_or_else(|| ConfigError::field("residual", "required"))?;
                if r.n_paths < 2 {
                    return Err(ConfigError::field("residual.n_paths", "needs at least 2 paths"));
                }
                if !(r.dt > 0.0) {
                    return Err(ConfigError::field("residual.dt", "must be positive"));
                }
                r.x.points("residual.x")?;
                let o = self.oracle.as_ref().ok_or_else(|| ConfigError::field("oracle", "required"))?;
                if !matches!(o.kind, OracleKind::Limit | OracleKind::FiniteBeta) {
                    return Err(ConfigError::field("oracle.kind", "residual mode checks a finite-difference grid"));
                }
                o.steps()?;
            }
            Mode::Lemma => {
                let l = self.lemma.as_ref().ok_or_else(|| ConfigError::field("lemma", "required"))?;
                if l.k.is_empty() {
                    return Err(ConfigError::field("lemma.k", "needs at least one rate"));
                }
                if l.probes.is_empty() {
                    return Err(ConfigError::field("lemma.probes", "needs at least one probe"));
                }
                if l.outer_paths < 2 || l.grid_paths < 2 {
                    return Err(ConfigError::field("lemma.outer_paths", "needs at least 2 paths"));
                }
                if !(l.h > 0.0 && l.dt > 0.0) {
                    return Err(ConfigError::field("lemma.h", "h and dt must be positive"));
                }
                match (&l.phi_time.lambda, &l.phi_time.coeffs) {
                    (Some(_), None) | (None, Some(_)) => {}
                    _ => {
                        return Err(ConfigError::field("lemma.phi_time", "give exactly one of `lambda` or `coeffs`"))
                    }
                }
                l.g.check("lemma.g")?;
                l.phi_space.check("lemma.phi_space")?;
            }
            _ => {}
        }
        if let Some(a) = &self.acceptance {
            if !(a.abs_tol >= 0.0) {
                return Err(ConfigError::field("acceptance.abs_tol", "must be nonnegative"));
            }
            if !(a.se_multiplier >= 0.0) {
                return Err(ConfigError::field("acceptance.se_multiplier", "must be nonnegative"));
            }
            if let Some([lo, hi]) = a.slope_range {
                if lo > hi {
                    return Err(ConfigError::field("acceptance.slope_range", "needs lo <= hi"));
                }
            }
        }
        Ok(())
    }

    fn require_oracle(&self) -> Result<&OracleSpec, ConfigError> {
        match &self.oracle {
            Some(o) if o.kind != OracleKind::None => {
                if o.kind != OracleKind::Heat {
                    o.steps()?;
                }
                Ok(o)
            }
            _ => Err(ConfigError::field("oracle", "this mode needs an oracle")),
        }
    }
}

/// Parses `--rule`-style overrides: a built-in name plus an optional alpha.
pub fn rule_override(name: &str, alpha: Option<&str>) -> Result<RuleField, ConfigError> {
    let alpha = alpha
        .map(|a| rules::parse_rational(a).map(|r| RationalText::Text(r.to_string())))
        .transpose()
        .map_err(|m| ConfigError::field("--alpha", m))?;
    Ok(RuleField::Table(RuleSpec { builtin: Some(name.to_string()), alpha, ..RuleSpec::default() }))
}
