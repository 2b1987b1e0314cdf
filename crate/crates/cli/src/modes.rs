//! One function per experiment mode. Each writes its artifacts and returns
//! the manifest and the acceptance verdict.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use branchflow_core::calculus::{psi_limit, psi_series, target_pde, validate_rule, ScalingFamily, DEFAULT_ORDER};
use branchflow_core::data::{BoundaryData, InitialCondition};
use branchflow_core::engine::{Domain, EngineConfig};
use branchflow_core::estimate::{estimate_field, EstimatorOptions, McResult};
use branchflow_core::lemma::{build_u_grid, check_identity, LemmaGridSpec, LemmaInstance, TemporalFactor};
use branchflow_core::reference::{integral_residual, ResidualOptions};
use branchflow_core::rng::derive_seed;
use branchflow_core::stats::ls_slope;
use thiserror::Error;

use crate::config::{self, AcceptanceSpec, ConfigError, ExperimentSpec, Mode, OracleKind, ResolvedRule};
use crate::oracle::{self, Oracle, OracleProblem};
use crate::output::{self, Manifest, OutDir, ResultRow, MANIFEST_FILE, RESULTS_FILE};
use crate::pool::Pool;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("computation failed: {0}")]
    Compute(String),
    #[error("cannot write output: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Compute(_) | RunError::Io(_) => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Ok,
    AcceptanceFailed,
    RuleRejected,
    NoLimit,
}

impl Status {
    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Ok => 0,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub status: Status,
    pub manifest: Manifest,
    pub files: Vec<PathBuf>,
}

/// Everything a run needs once flags and config are merged.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub spec: ExperimentSpec,
    pub config_text: String,
    pub base_dir: PathBuf,
    pub mode: Mode,
    pub seed: u64,
    pub threads: usize,
    /// `None` only for modes that print and need no files.
    pub out: Option<PathBuf>,
}

impl RunContext {
    /// Context from config text; flags left as `None` fall back to the file.
    pub fn from_text(
        text: &str,
        mode: Option<Mode>,
        seed: Option<u64>,
        threads: Option<usize>,
        out: Option<PathBuf>,
    ) -> Result<Self, ConfigError> {
        let spec = config::parse("<config>", text)?;
        Self::new(spec, text.to_string(), PathBuf::from("."), mode, seed, threads, out)
    }

    pub fn new(
        spec: ExperimentSpec,
        config_text: String,
        base_dir: PathBuf,
        mode: Option<Mode>,
        seed: Option<u64>,
        threads: Option<usize>,
        out: Option<PathBuf>,
    ) -> Result<Self, ConfigError> {
        let mode = mode.or(spec.mode).ok_or_else(|| ConfigError::field("mode", "required for `run`"))?;
        let seed = seed.unwrap_or_else(|| spec.seed());
        let threads = crate::pool::resolve_threads(threads, spec.threads);
        let out = out.or_else(|| spec.out.as_ref().map(|p| base_dir.join(p)));
        Ok(Self { spec, config_text, base_dir, mode, seed, threads, out })
    }

    fn out_dir(&self) -> io::Result<OutDir> {
        let root = self.out.clone().unwrap_or_else(|| PathBuf::from("branchflow-out"));
        OutDir::create(&root)
    }
}

pub fn run(ctx: &RunContext, stdout: &mut dyn Write) -> Result<RunReport, RunError> {
    let start = Instant::now();
    ctx.spec.validate(ctx.mode)?;
    let mut manifest = Manifest::default();
    manifest.set("tool", "branchflow");
    manifest.set("version", env!("CARGO_PKG_VERSION"));
    manifest.set("core_version", branchflow_core::VERSION);
    manifest.set("mode", ctx.mode);
    manifest.set("seed", ctx.seed);
    manifest.set("threads", ctx.threads);
    manifest.set("config", &ctx.config_text);

    let pool = Pool::new(ctx.threads).map_err(|e| RunError::Compute(e.to_string()))?;
    let mut run = ModeRun { ctx, pool: &pool, manifest, stdout, out: None };
    let status = match ctx.mode {
        Mode::Psi => run.psi()?,
        Mode::ValidateRule => run.validate_rule()?,
        Mode::Point | Mode::Field => run.field()?,
        Mode::ConvergeBeta => run.converge_beta()?,
        Mode::ConvergeN => run.converge_n()?,
        Mode::Oracle => run.oracle()?,
        Mode::Residual => run.residual()?,
        Mode::Lemma => run.lemma()?,
    };
    let ModeRun { mut manifest, out, .. } = run;
    manifest.set("status", format!("{status:?}").to_lowercase());
    manifest.set("wall_time_s", format!("{:.3}", start.elapsed().as_secs_f64()));
    let mut files = Vec::new();
    let out = match out {
        Some(o) => Some(o),
        None if ctx.out.is_some() => Some(ctx.out_dir()?),
        None => None,
    };
    if let Some(mut out) = out {
        let path = out.file(MANIFEST_FILE);
        manifest.write(&path)?;
        files = out.written;
    }
    Ok(RunReport { status, manifest, files })
}

/// Inputs shared by the Monte Carlo modes.
struct McSetup {
    rule: ResolvedRule,
    f: InitialCondition,
    g: Option<BoundaryData>,
    interval: Option<(f64, f64)>,
    t: f64,
    xs: Vec<f64>,
}

struct Block {
    beta: f64,
    n_trees: usize,
    rows: Vec<ResultRow>,
    results: Vec<Option<McResult>>,
}

struct ModeRun<'a> {
    ctx: &'a RunContext,
    pool: &'a Pool,
    manifest: Manifest,
    stdout: &'a mut dyn Write,
    out: Option<OutDir>,
}

fn compute<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Compute(e.to_string())
}

fn row_passes(row: &ResultRow, acc: &AcceptanceSpec) -> bool {
    if !row.abs_error.is_finite() {
        return false;
    }
    let mut ok = row.abs_error <= acc.abs_tol.max(acc.se_multiplier * row.stderr);
    if let Some(rel) = acc.rel_tol {
        ok &= row.abs_error <= rel * row.oracle.abs();
    }
    ok
}

fn scaling_name(s: ScalingFamily) -> &'static str {
    match s {
        ScalingFamily::Scaling1 => "scaling1",
        ScalingFamily::Scaling2 => "scaling2",
        ScalingFamily::Unit => "unit",
    }
}

impl ModeRun<'_> {
    fn spec(&self) -> &ExperimentSpec {
        &self.ctx.spec
    }

    fn out(&mut self) -> io::Result<&mut OutDir> {
        if self.out.is_none() {
            self.out = Some(self.ctx.out_dir()?);
        }
        Ok(self.out.as_mut().expect("created above"))
    }

    fn resolve_rule(&mut self) -> Result<ResolvedRule, RunError> {
        let r = self.spec().resolve_rule(&self.ctx.base_dir)?;
        self.manifest.set("rule", &r.label);
        self.manifest.set("scaling", scaling_name(r.scaling));
        Ok(r)
    }

    fn mc_setup(&mut self) -> Result<McSetup, RunError> {
        let rule = self.resolve_rule()?;
        let spec = self.spec();
        Ok(McSetup { f: spec.f()?, g: spec.g()?, interval: spec.interval()?, t: spec.t()?, xs: spec.xs()?, rule })
    }

    fn engine_config(&self, s: &McSetup, beta: f64, seed: u64) -> EngineConfig {
        let domain = match s.interval {
            Some((a, b)) => Domain::interval(s.t, a, b),
            None => Domain::cauchy(s.t),
        };
        let mut cfg = EngineConfig::new(s.rule.rule.clone(), beta, domain, seed);
        let e = &self.spec().engine;
        if let Some(m) = e.max_population {
            cfg.max_population = m;
        }
        if let Some(d) = e.max_deriv_order {
            cfg.max_deriv_order = d;
        }
        if let Some(h) = e.boundary_step {
            cfg.boundary_step = h;
        }
        cfg
    }

    fn build_oracle(&mut self, s: &McSetup, beta: f64) -> Oracle {
        let problem = OracleProblem {
            rule: &s.rule.rule,
            scaling: s.rule.scaling,
            f: &s.f,
            g: s.g.as_ref(),
            interval: s.interval,
            horizon: s.t,
            xs: &s.xs,
        };
        match oracle::build(self.ctx.spec.oracle.as_ref(), &problem, beta) {
            Ok(o) => o,
            Err(e) => {
                self.manifest.set(format!("oracle.error.beta={beta}"), &e);
                let _ = writeln!(self.stdout, "oracle unavailable at beta = {beta}: {e}");
                Oracle::None
            }
        }
    }

    /// Runs every `(beta, n_trees)` pair; pair `i` uses `derive_seed(seed, i)`
    /// unless it is the only one.
    fn blocks(&mut self, s: &McSetup, betas: &[f64], ns: &[usize]) -> Result<Vec<Block>, RunError> {
        let per_beta = self.spec().oracle.as_ref().is_some_and(|o| o.kind == OracleKind::FiniteBeta);
        let mut shared: Option<Oracle> = None;
        let single = betas.len() * ns.len() == 1;
        let opts_log = self.spec().estimator.plug_in_log;
        let mut blocks = Vec::new();
        let mut error_count = 0usize;
        for (bi, &beta) in betas.iter().enumerate() {
            let fresh;
            let oracle = if per_beta {
                fresh = self.build_oracle(s, beta);
                &fresh
            } else {
                if shared.is_none() {
                    shared = Some(self.build_oracle(s, beta));
                }
                shared.as_ref().expect("built above")
            };
            for (ni, &n) in ns.iter().enumerate() {
                let idx = bi * ns.len() + ni;
                let seed = if single { self.ctx.seed } else { derive_seed(self.ctx.seed, idx as u64) };
                let cfg = self.engine_config(s, beta, seed);
                let mut opts = EstimatorOptions::new(s.rule.scaling, n);
                opts.plug_in_log = opts_log;
                let results = estimate_field(&s.xs, &cfg, &s.f, s.g.as_ref(), &opts, self.pool).map_err(compute)?;
                let mut rows = Vec::with_capacity(results.len());
                let mut kept = Vec::with_capacity(results.len());
                for (&x, r) in s.xs.iter().zip(results) {
                    let o = oracle.value(s.t, x).unwrap_or(f64::NAN);
                    match r {
                        Ok(m) => {
                            rows.push(ResultRow::new(x, s.t, m.beta, n, m.estimate, m.stderr, o));
                            kept.push(Some(m));
                        }
                        Err(e) => {
                            error_count += 1;
                            self.manifest.set(format!("error.beta={beta}.n_trees={n}.x={x}"), &e);
                            rows.push(ResultRow::new(x, s.t, beta, n, f64::NAN, f64::NAN, o));
                            kept.push(None);
                        }
                    }
                }
                for r in &rows {
                    writeln!(
                        self.stdout,
                        "beta={} n_trees={} x={}: estimate={:.6} stderr={:.2e} oracle={:.6} abs_error={:.2e}",
                        r.beta, r.n_trees, r.x, r.estimate, r.stderr, r.oracle, r.abs_error
                    )?;
                }
                blocks.push(Block { beta, n_trees: n, rows, results: kept });
            }
        }
        self.manifest.set("row_errors", error_count);
        Ok(blocks)
    }

    fn write_results(&mut self, blocks: &[Block]) -> Result<(), RunError> {
        let rows: Vec<ResultRow> = blocks.iter().flat_map(|b| b.rows.iter().cloned()).collect();
        let path = self.out()?.file(RESULTS_FILE);
        output::write_rows(&path, &rows)?;
        let plot: Vec<(String, Vec<Vec<f64>>)> = blocks
            .iter()
            .map(|b| {
                let rows = b
                    .rows
                    .iter()
                    .map(|r| vec![r.x, r.estimate, r.estimate - 3.0 * r.stderr, r.estimate + 3.0 * r.stderr, r.oracle])
                    .collect();
                (format!("beta={} n_trees={}", b.beta, b.n_trees), rows)
            })
            .collect();
        let path = self.out()?.file("plot_field.dat");
        output::write_plot_data(&path, &["x", "estimate", "lo_3se", "hi_3se", "oracle"], &plot)?;
        let diag: Vec<Vec<f64>> = blocks
            .iter()
            .flat_map(|b| {
                b.rows.iter().zip(&b.results).map(move |(r, m)| match m {
                    Some(m) => vec![
                        r.x,
                        b.beta,
                        b.n_trees as f64,
                        m.m_minus,
                        m.m_minus_stderr,
                        m.m_plus,
                        m.m_plus_stderr,
                        m.dead_tree_fraction,
                        m.capped_tree_count as f64,
                        m.mean_atoms,
                    ],
                    None => vec![r.x, b.beta, b.n_trees as f64, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN],
                })
            })
            .collect();
        let path = self.out()?.file("diagnostics.csv");
        output::write_table(
            &path,
            &[
                "x",
                "beta",
                "n_trees",
                "m_minus",
                "m_minus_stderr",
                "m_plus",
                "m_plus_stderr",
                "dead_tree_fraction",
                "capped_trees",
                "mean_atoms",
            ],
            diag,
        )?;
        Ok(())
    }

    fn verdict(&mut self, checks: &[(&str, bool)]) -> Status {
        if self.spec().acceptance.is_none() {
            self.manifest.set("acceptance", "none");
            return Status::Ok;
        }
        let mut all = true;
        for (name, ok) in checks {
            self.manifest.set(format!("acceptance.{name}"), if *ok { "pass" } else { "fail" });
            let _ = writeln!(self.stdout, "acceptance {name}: {}", if *ok { "PASS" } else { "FAIL" });
            all &= ok;
        }
        self.manifest.set("acceptance", if all { "pass" } else { "fail" });
        if all {
            Status::Ok
        } else {
            Status::AcceptanceFailed
        }
    }

    fn rows_pass(&self, rows: &[ResultRow]) -> bool {
        match &self.spec().acceptance {
            Some(acc) => rows.iter().all(|r| row_passes(r, acc)),
            None => true,
        }
    }

    fn field(&mut self) -> Result<Status, RunError> {
        let s = self.mc_setup()?;
        let betas = self.spec().beta.clone();
        let ns = self.spec().n_trees.clone();
        let blocks = self.blocks(&s, &betas, &ns)?;
        self.write_results(&blocks)?;
        let rows: Vec<ResultRow> = blocks.iter().flat_map(|b| b.rows.iter().cloned()).collect();
        let ok = self.rows_pass(&rows);
        Ok(self.verdict(&[("rows", ok)]))
    }

    fn converge_beta(&mut self) -> Result<Status, RunError> {
        let s = self.mc_setup()?;
        let betas = self.spec().beta.clone();
        let ns = self.spec().n_trees.clone();
        let blocks = self.blocks(&s, &betas, &ns)?;
        self.write_results(&blocks)?;
        let summary: Vec<Summary> = blocks.iter().map(Summary::of).collect();
        self.write_convergence(&summary, "convergence.csv")?;
        let xs: Vec<f64> = summary.iter().map(|r| r.beta.ln()).collect();
        let ys: Vec<f64> = summary.iter().map(|r| r.max_abs_error.ln()).collect();
        let slope = ls_slope(&xs, &ys);
        self.manifest.set("slope_log_error_vs_log_beta", slope);
        writeln!(self.stdout, "fitted slope of log max error vs log beta: {slope:.3}")?;

        let Some(acc) = self.spec().acceptance.clone() else { return Ok(self.verdict(&[])) };
        let last = blocks.last().expect("at least 3 betas");
        let mut checks = vec![("rows_at_smallest_beta", last.rows.iter().all(|r| row_passes(r, &acc)))];
        if let Some([lo, hi]) = acc.slope_range {
            checks.push(("slope", slope >= lo && slope <= hi));
        }
        if acc.monotone == Some(true) {
            let ok = summary.windows(2).all(|w| {
                let noise = acc.se_multiplier * w[0].stderr_at_max.hypot(w[1].stderr_at_max);
                w[1].max_abs_error <= w[0].max_abs_error + noise
            });
            checks.push(("monotone", ok));
        }
        Ok(self.verdict(&checks))
    }

    fn converge_n(&mut self) -> Result<Status, RunError> {
        let s = self.mc_setup()?;
        let betas = self.spec().beta.clone();
        let ns = self.spec().n_trees.clone();
        let blocks = self.blocks(&s, &betas, &ns)?;
        self.write_results(&blocks)?;
        let summary: Vec<Summary> = blocks.iter().map(Summary::of).collect();
        self.write_convergence(&summary, "convergence.csv")?;
        let xs: Vec<f64> = summary.iter().map(|r| (r.n_trees as f64).ln()).collect();
        let ys: Vec<f64> = summary.iter().map(|r| r.max_stderr.ln()).collect();
        let slope = ls_slope(&xs, &ys);
        self.manifest.set("slope_log_stderr_vs_log_n", slope);
        writeln!(self.stdout, "fitted slope of log max stderr vs log n_trees: {slope:.3}")?;

        let Some(acc) = self.spec().acceptance.clone() else { return Ok(self.verdict(&[])) };
        let last = blocks.last().expect("at least 3 sizes");
        let mut checks = vec![("rows_at_largest_n", last.rows.iter().all(|r| row_passes(r, &acc)))];
        if let Some([lo, hi]) = acc.slope_range {
            checks.push(("slope", slope >= lo && slope <= hi));
        }
        Ok(self.verdict(&checks))
    }

    fn write_convergence(&mut self, summary: &[Summary], name: &str) -> Result<(), RunError> {
        let path = self.out()?.file(name);
        output::write_table(
            &path,
            &["beta", "n_trees", "max_abs_error", "mean_abs_error", "stderr_at_max", "max_stderr"],
            summary.iter().map(|r| {
                vec![r.beta, r.n_trees as f64, r.max_abs_error, r.mean_abs_error, r.stderr_at_max, r.max_stderr]
            }),
        )?;
        let path = self.out()?.file("plot_convergence.dat");
        let rows = summary.iter().map(|r| vec![r.beta, r.n_trees as f64, r.max_abs_error, r.stderr_at_max]).collect();
        output::write_plot_data(&path, &["beta", "n_trees", "max_abs_error", "stderr_at_max"], &[("sweep".into(), rows)])?;
        for r in summary {
            writeln!(
                self.stdout,
                "beta={} n_trees={}: max_abs_error={:.4e} (stderr {:.2e}) mean_abs_error={:.4e}",
                r.beta, r.n_trees, r.max_abs_error, r.stderr_at_max, r.mean_abs_error
            )?;
        }
        Ok(())
    }

    fn psi(&mut self) -> Result<Status, RunError> {
        let r = self.resolve_rule()?;
        let order = self.spec().oracle.as_ref().map(|o| o.order()).unwrap_or(DEFAULT_ORDER);
        writeln!(self.stdout, "rule = {}", r.label)?;
        writeln!(self.stdout, "scaling = {}", scaling_name(r.scaling))?;
        let series = match psi_series(&r.rule, r.scaling, order) {
            Ok(s) => s,
            Err(e) => {
                writeln!(self.stdout, "no psi series: {e}")?;
                self.manifest.set("psi.error", &e);
                return Ok(Status::RuleRejected);
            }
        };
        let status = match psi_limit(&series) {
            Ok(pde) => {
                writeln!(self.stdout, "psi = {}", pde.psi_string())?;
                writeln!(self.stdout, "equation: {pde}")?;
                self.manifest.set("psi", pde.psi_string());
                Status::Ok
            }
            Err(e) => {
                writeln!(self.stdout, "psi = (no limit: {e})")?;
                self.manifest.set("psi.error", &e);
                Status::NoLimit
            }
        };
        writeln!(self.stdout, "psi_beta = {series}")?;
        self.manifest.set("psi_beta", &series);
        Ok(status)
    }

    fn validate_rule(&mut self) -> Result<Status, RunError> {
        let r = match self.spec().resolve_rule(&self.ctx.base_dir) {
            Ok(r) => r,
            Err(ConfigError::Rule { error, .. }) => {
                writeln!(self.stdout, "rule rejected: {error}")?;
                self.manifest.set("validation", format!("rejected: {error}"));
                return Ok(Status::RuleRejected);
            }
            Err(e) => return Err(e.into()),
        };
        self.manifest.set("rule", &r.label);
        match validate_rule(&r.rule) {
            Ok(report) => {
                write!(self.stdout, "{report}")?;
                match target_pde(&r.rule, r.scaling) {
                    Ok(pde) => writeln!(self.stdout, "under {}: {pde}", scaling_name(r.scaling))?,
                    Err(e) => writeln!(self.stdout, "under {}: no limiting equation ({e})", scaling_name(r.scaling))?,
                }
                self.manifest.set("validation", "valid");
                Ok(Status::Ok)
            }
            Err(e) => {
                writeln!(self.stdout, "rule rejected: {e}")?;
                self.manifest.set("validation", format!("rejected: {e}"));
                Ok(Status::RuleRejected)
            }
        }
    }

    fn oracle(&mut self) -> Result<Status, RunError> {
        let rule = self.resolve_rule()?;
        let spec = self.spec();
        let s = McSetup { f: spec.f()?, g: spec.g()?, interval: spec.interval()?, t: spec.t()?, xs: spec.xs()?, rule };
        let beta = self.spec().beta.first().copied().unwrap_or(1.0);
        let problem = OracleProblem {
            rule: &s.rule.rule,
            scaling: s.rule.scaling,
            f: &s.f,
            g: s.g.as_ref(),
            interval: s.interval,
            horizon: s.t,
            xs: &s.xs,
        };
        let o = oracle::build(self.spec().oracle.as_ref(), &problem, beta).map_err(compute)?;
        if let Some(grid) = o.grid() {
            let path = self.out()?.file("grid.csv");
            output::write_table(&path, &["t", "x", "u"], grid.rows().map(|(t, x, u)| vec![t, x, u]))?;
            self.manifest.set("grid.scheme", grid.scheme);
            self.manifest.set("grid.h", grid.h);
            self.manifest.set("grid.nodes", grid.xs.len());
            self.manifest.set("grid.saved_levels", grid.ts.len());
        }
        let mut rows = Vec::new();
        for &x in &s.xs {
            let u = o.value(s.t, x).unwrap_or(f64::NAN);
            writeln!(self.stdout, "u({}, {x}) = {u:.8}", s.t)?;
            rows.push(vec![x, s.t, u]);
        }
        let path = self.out()?.file("oracle.csv");
        output::write_table(&path, &["x", "t", "u"], rows)?;
        Ok(Status::Ok)
    }

    fn residual(&mut self) -> Result<Status, RunError> {
        let rule = self.resolve_rule()?;
        let spec = self.spec();
        if spec.interval()?.is_some() {
            return Err(ConfigError::field("domain.interval", "residual mode checks whole-line solutions").into());
        }
        let r = spec.residual.clone().expect("validated");
        let xs = r.x.points("residual.x")?;
        let s = McSetup { f: spec.f()?, g: None, interval: None, t: spec.t()?, xs: xs.clone(), rule };
        let beta = spec.beta.first().copied().unwrap_or(1.0);
        let mut ospec = spec.oracle.clone().expect("validated");
        ospec.save_every = Some(ospec.save_every.unwrap_or(1));
        let problem = OracleProblem {
            rule: &s.rule.rule,
            scaling: s.rule.scaling,
            f: &s.f,
            g: None,
            interval: None,
            horizon: s.t,
            xs: &s.xs,
        };
        let Oracle::Grid { solution, psi, initial } = oracle::build(Some(&ospec), &problem, beta).map_err(compute)? else {
            return Err(RunError::Compute("residual mode needs a grid solution".into()));
        };
        let opts = ResidualOptions { n_paths: r.n_paths, dt: r.dt, seed: self.ctx.seed };
        let points = integral_residual(&solution, &psi, &*initial, &xs, &opts, self.pool).map_err(compute)?;
        let path = self.out()?.file("residual.csv");
        output::write_table(
            &path,
            &["x", "u", "green", "poisson", "residual", "stderr"],
            points.iter().map(|p| vec![p.x, p.u, p.green, p.poisson, p.residual, p.stderr]),
        )?;
        for p in &points {
            writeln!(self.stdout, "x={}: residual={:.3e} stderr={:.2e}", p.x, p.residual, p.stderr)?;
        }
        let checks = match &self.spec().acceptance {
            Some(acc) => {
                let tol = acc.max_residual.unwrap_or(0.0);
                let ok = points.iter().all(|p| p.residual.abs() <= tol.max(acc.se_multiplier * p.stderr));
                vec![("residual", ok)]
            }
            None => vec![],
        };
        Ok(self.verdict(&checks))
    }

    fn lemma(&mut self) -> Result<Status, RunError> {
        let l = self.spec().lemma.clone().expect("validated");
        let phi_time = match (&l.phi_time.lambda, &l.phi_time.coeffs) {
            (Some(lambda), _) => TemporalFactor::Exponential { lambda: *lambda },
            (_, Some(c)) => TemporalFactor::Polynomial { coeffs: c.clone() },
            _ => unreachable!("validated"),
        };
        let mut main_rows = Vec::new();
        let mut bias_rows = Vec::new();
        let mut labels = Vec::new();
        let mut all_pass = true;
        let se_mult = self.spec().acceptance.as_ref().map(|a| a.se_multiplier);
        for (ki, &k) in l.k.iter().enumerate() {
            let inst = LemmaInstance {
                k,
                g: l.g.to_initial(),
                phi_space: l.phi_space.to_initial(),
                phi_time: phi_time.clone(),
                horizon: l.horizon,
                probes: l.probes.iter().map(|p| (p[0], p[1])).collect(),
            };
            let mut gspec = LemmaGridSpec::for_instance(&inst, l.h, l.dt);
            if let Some(b) = l.batches {
                gspec.batches = b;
            }
            let grid = build_u_grid(&inst, &gspec, l.grid_paths, derive_seed(self.ctx.seed, 2 * ki as u64), self.pool)
                .map_err(compute)?;
            let probes = check_identity(&inst, &grid, l.outer_paths, derive_seed(self.ctx.seed, 2 * ki as u64 + 1), self.pool)
                .map_err(compute)?;
            let path = self.out()?.file(&format!("lemma_u_k{k}.csv"));
            output::write_table(&path, &["t", "x", "u"], grid.u.rows().map(|(t, x, u)| vec![t, x, u]))?;
            for p in probes {
                let label = format!("k={k} x={} t={}", p.x, p.t);
                let passed = match se_mult {
                    Some(m) => p.diff.abs() <= m * p.stderr + p.grid_bias.abs(),
                    None => p.passed,
                };
                all_pass &= passed;
                writeln!(
                    self.stdout,
                    "{label}: lhs={:.6} rhs={:.6} diff={:.2e} stderr={:.2e} bias={:.2e} {}",
                    p.lhs,
                    p.rhs,
                    p.diff,
                    p.stderr,
                    p.grid_bias,
                    if passed { "ok" } else { "outside" }
                )?;
                main_rows.push((label.clone(), [p.lhs, p.rhs, p.diff, p.stderr]));
                bias_rows.push((
                    label.clone(),
                    [k, p.x, p.t, p.outer_stderr, p.grid_stderr, p.grid_bias, p.bias_constant, f64::from(u8::from(passed))],
                ));
                labels.push(label);
            }
        }
        let path = self.out()?.file("lemma.csv");
        write_labeled(&path, &["probe", "lhs", "rhs", "diff", "stderr"], &main_rows)?;
        let path = self.out()?.file("lemma_bias.csv");
        write_labeled(
            &path,
            &["probe", "k", "x", "t", "outer_stderr", "grid_stderr", "grid_bias", "bias_constant", "passed"],
            &bias_rows,
        )?;
        self.manifest.set("lemma.probes", labels.len());
        Ok(self.verdict(&[("identity", all_pass)]))
    }
}

fn write_labeled<const N: usize>(path: &Path, headers: &[&str], rows: &[(String, [f64; N])]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(io::Error::other)?;
    w.write_record(headers).map_err(io::Error::other)?;
    for (label, vals) in rows {
        let mut rec = vec![label.clone()];
        rec.extend(vals.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io::Error::other)?;
    }
    w.flush()
}

/// Per-block error summary for convergence tables.
struct Summary {
    beta: f64,
    n_trees: usize,
    max_abs_error: f64,
    mean_abs_error: f64,
    stderr_at_max: f64,
    max_stderr: f64,
}

impl Summary {
    fn of(b: &Block) -> Self {
        let mut max_abs_error = f64::NEG_INFINITY;
        let mut stderr_at_max = f64::NAN;
        let mut max_stderr: f64 = 0.0;
        let mut sum = 0.0;
        for r in &b.rows {
            // NaN rows poison the summary on purpose
            if r.abs_error > max_abs_error || r.abs_error.is_nan() {
                max_abs_error = r.abs_error;
                stderr_at_max = r.stderr;
            }
            max_stderr = max_stderr.max(r.stderr);
            sum += r.abs_error;
        }
        Self {
            beta: b.beta,
            n_trees: b.n_trees,
            max_abs_error,
            mean_abs_error: sum / b.rows.len() as f64,
            stderr_at_max,
            max_stderr,
        }
    }
}
