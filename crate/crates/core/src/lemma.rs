//! Monte Carlo check of the renewal identity
//!
//! ```text
//! u(x,t) + E_x k int_0^t u(xi_s, t-s) ds = E_x { u(xi_t, 0) + k int_0^t Phi(xi_s, t-s) ds }
//! ```
//!
//! for `u(x,t) = E_x { e^{-kt} g(xi_t) + int_0^t k e^{-ks} Phi(xi_s, t-s) ds }`.
//!
//! `u` is tabulated from its defining expectation on a grid built from
//! independent path batches, so the noise the grid injects into the left
//! side can be estimated by batch means. A second grid at twice the spacing
//! in `x` and `t` gives a Richardson estimate of the discretization bias.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::data::InitialCondition;
use crate::exec::Executor;
use crate::math;
use crate::reference::GridSolution;
use crate::rng::{derive_seed, TreeRng};
use crate::stats::{mean_var, NeumaierSum};

pub const DEFAULT_BATCHES: usize = 32;
/// Grid padding beyond the probe range, in units of `sqrt(T)`.
pub const PADDING_SIGMAS: f64 = 7.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LemmaError {
    #[error("invalid lemma instance: {0}")]
    InvalidInstance(&'static str),
    #[error("probe ({x}, {t}) lies outside the grid")]
    ProbeOutsideGrid { x: f64, t: f64 },
    #[error("an outer path from probe ({x}, {t}) left the grid")]
    PathOutsideGrid { x: f64, t: f64 },
}

/// Time factor of `Phi(x, t) = h(x) tau(t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum TemporalFactor {
    /// `e^{-lambda t}`
    Exponential { lambda: f64 },
    /// `sum coeffs[p] t^p`
    Polynomial { coeffs: Vec<f64> },
}

impl TemporalFactor {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            TemporalFactor::Exponential { lambda } => math::exp(-lambda * t),
            TemporalFactor::Polynomial { coeffs } => {
                coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
            }
        }
    }

    /// `tau(t - s) = sum_r A_r(t) B_r(s)`.
    fn separable_len(&self) -> usize {
        match self {
            TemporalFactor::Exponential { .. } => 1,
            TemporalFactor::Polynomial { coeffs } => coeffs.len().max(1),
        }
    }

    fn a(&self, r: usize, t: f64) -> f64 {
        match self {
            TemporalFactor::Exponential { lambda } => math::exp(-lambda * t),
            TemporalFactor::Polynomial { coeffs } => {
                let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
                let mut acc = 0.0;
                for (p, c) in coeffs.iter().enumerate().skip(r) {
                    acc += c * binomial(p, r) * math::powi(t, (p - r) as u32);
                }
                sign * acc
            }
        }
    }

    fn b(&self, r: usize, s: f64) -> f64 {
        match self {
            TemporalFactor::Exponential { lambda } => math::exp(lambda * s),
            TemporalFactor::Polynomial { .. } => math::powi(s, r as u32),
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaInstance {
    /// Clock rate.
    pub k: f64,
    /// `u(., 0)`.
    pub g: InitialCondition,
    pub phi_space: InitialCondition,
    pub phi_time: TemporalFactor,
    pub horizon: f64,
    /// `(x, t)` with `0 <= t <= horizon`.
    pub probes: Vec<(f64, f64)>,
}

impl LemmaInstance {
    pub fn phi(&self, x: f64, t: f64) -> f64 {
        self.phi_space.value(x) * self.phi_time.value(t)
    }

    fn validate(&self) -> Result<(), LemmaError> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(LemmaError::InvalidInstance("k must be positive"));
        }
        if !(self.horizon > 0.0) {
            return Err(LemmaError::InvalidInstance("horizon must be positive"));
        }
        if self
            .probes
            .iter()
            .any(|&(_, t)| !(0.0..=self.horizon).contains(&t))
        {
            return Err(LemmaError::InvalidInstance(
                "probe times must lie in [0, horizon]",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaGridSpec {
    pub x_lo: f64,
    pub x_hi: f64,
    /// Spatial intervals; even, so the coarse grid takes every other node.
    pub nx: usize,
    /// Time steps over `[0, horizon]`; even.
    pub nt: usize,
    pub batches: usize,
}

impl LemmaGridSpec {
    /// Covers the probes with `7 sqrt(T)` padding at spacing about `h`.
    pub fn for_instance(inst: &LemmaInstance, h: f64, dt: f64) -> Self {
        let lo = inst
            .probes
            .iter()
            .map(|p| p.0)
            .fold(f64::INFINITY, f64::min);
        let hi = inst
            .probes
            .iter()
            .map(|p| p.0)
            .fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (0.0, 0.0) };
        let pad = PADDING_SIGMAS * math::sqrt(inst.horizon);
        let mut nx = math::round((hi - lo + 2.0 * pad) / h).max(2.0) as usize;
        nx += nx % 2;
        let mut nt = math::round(inst.horizon / dt).max(2.0) as usize;
        nt += nt % 2;
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * nx as f64 * h;
        Self {
            x_lo: mid - half,
            x_hi: mid + half,
            nx,
            nt,
            batches: DEFAULT_BATCHES,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LemmaGrid {
    /// Mean over all paths.
    pub u: GridSolution,
    /// Every other node in `x` and `t`, trapezoid at the doubled step.
    pub coarse: GridSolution,
    /// Per-batch means, flattened time-major like `u.values`.
    batch_means: Vec<Vec<f64>>,
    pub n_paths: usize,
}

impl LemmaGrid {
    pub fn batches(&self) -> usize {
        self.batch_means.len()
    }
}

fn flat(sol: &GridSolution) -> Vec<f64> {
    sol.values.iter().flatten().copied().collect()
}

fn unflat(data: &[f64], xs: &[f64], ts: &[f64], h: f64) -> GridSolution {
    GridSolution {
        xs: xs.to_vec(),
        ts: ts.to_vec(),
        values: data.chunks(xs.len()).map(|c| c.to_vec()).collect(),
        h,
        periodic: false,
        scheme: "monte-carlo/trapezoid",
    }
}

/// Bilinear stencil: flat node indices and weights, or `None` outside.
fn stencil(sol: &GridSolution, t: f64, x: f64) -> Option<[(usize, f64); 4]> {
    let nx = sol.xs.len();
    let nt = sol.ts.len();
    let s = (x - sol.xs[0]) / sol.h;
    if !(s >= 0.0 && s <= (nx - 1) as f64) {
        return None;
    }
    let dt = sol.ts[1] - sol.ts[0];
    let r = t / dt;
    if !(r >= -1e-9 && r <= (nt - 1) as f64 + 1e-9) {
        return None;
    }
    let i = (math::floor(s) as usize).min(nx - 2);
    let wx = s - i as f64;
    let j = (math::floor(r.max(0.0)) as usize).min(nt - 2);
    let wt = (r - j as f64).clamp(0.0, 1.0);
    let base = j * nx + i;
    Some([
        (base, (1.0 - wt) * (1.0 - wx)),
        (base + 1, (1.0 - wt) * wx),
        (base + nx, wt * (1.0 - wx)),
        (base + nx + 1, wt * wx),
    ])
}

fn apply(data: &[f64], st: &[(usize, f64); 4]) -> f64 {
    st.iter().map(|&(i, w)| w * data[i]).sum()
}

/// Tabulates `u` by Monte Carlo; every node of one path shares the same
/// Brownian increments.
pub fn build_u_grid<E: Executor>(
    inst: &LemmaInstance,
    spec: &LemmaGridSpec,
    n_paths: usize,
    seed: u64,
    exec: &E,
) -> Result<LemmaGrid, LemmaError> {
    inst.validate()?;
    if spec.nx < 2 || spec.nt < 2 || spec.nx % 2 == 1 || spec.nt % 2 == 1 {
        return Err(LemmaError::InvalidInstance("grid needs even nx, nt >= 2"));
    }
    if spec.batches < 2 {
        return Err(LemmaError::InvalidInstance("need at least 2 batches"));
    }
    let per_batch = n_paths.div_ceil(spec.batches).max(1);
    let n_paths = per_batch * spec.batches;

    let h = (spec.x_hi - spec.x_lo) / spec.nx as f64;
    let dt = inst.horizon / spec.nt as f64;
    let xs: Vec<f64> = (0..=spec.nx).map(|i| spec.x_lo + i as f64 * h).collect();
    let ts: Vec<f64> = (0..=spec.nt).map(|j| j as f64 * dt).collect();
    let xs_c: Vec<f64> = xs.iter().step_by(2).copied().collect();
    let ts_c: Vec<f64> = ts.iter().step_by(2).copied().collect();
    let (nxf, ntf) = (xs.len(), ts.len());
    let (nxc, ntc) = (xs_c.len(), ts_c.len());
    let k = inst.k;
    let terms = inst.phi_time.separable_len();
    // precomputed time factors
    let decay: Vec<f64> = ts.iter().map(|&t| math::exp(-k * t)).collect();
    let a_t: Vec<Vec<f64>> = (0..terms)
        .map(|r| ts.iter().map(|&t| inst.phi_time.a(r, t)).collect())
        .collect();
    let b_s: Vec<Vec<f64>> = (0..terms)
        .map(|r| {
            ts.iter()
                .map(|&s| k * math::exp(-k * s) * inst.phi_time.b(r, s))
                .collect()
        })
        .collect();

    let batch = |b: usize| -> (Vec<f64>, Vec<f64>) {
        let mut fine = vec![0.0; ntf * nxf];
        let mut coarse = vec![0.0; ntc * nxc];
        let mut w = vec![0.0; ntf];
        let mut gv = vec![0.0; ntf];
        let mut hv = vec![0.0; ntf];
        let mut pf = vec![0.0; ntf];
        let mut pc = vec![0.0; ntc];
        let sq = math::sqrt(dt);
        for p in 0..per_batch {
            let mut rng = TreeRng::new(seed, (b * per_batch + p) as u64);
            for m in 1..ntf {
                w[m] = w[m - 1] + sq * rng.normal();
            }
            for (i, &x) in xs.iter().enumerate() {
                let even_x = i % 2 == 0;
                for m in 0..ntf {
                    gv[m] = inst.g.value(x + w[m]);
                    hv[m] = inst.phi_space.value(x + w[m]);
                }
                for j in 0..ntf {
                    fine[j * nxf + i] += decay[j] * gv[j];
                }
                if even_x {
                    for jc in 0..ntc {
                        coarse[jc * nxc + i / 2] += decay[2 * jc] * gv[2 * jc];
                    }
                }
                for r in 0..terms {
                    // running trapezoid sums of k e^{-ks} B_r(s) h(x + W_s)
                    let mut acc = 0.0;
                    for m in 0..ntf {
                        let v = b_s[r][m] * hv[m];
                        acc += v;
                        pf[m] = dt * (acc - 0.5 * (b_s[r][0] * hv[0] + v));
                    }
                    for j in 1..ntf {
                        fine[j * nxf + i] += a_t[r][j] * pf[j];
                    }
                    if even_x {
                        let mut acc = 0.0;
                        for jc in 0..ntc {
                            let v = b_s[r][2 * jc] * hv[2 * jc];
                            acc += v;
                            pc[jc] = 2.0 * dt * (acc - 0.5 * (b_s[r][0] * hv[0] + v));
                        }
                        for jc in 1..ntc {
                            coarse[jc * nxc + i / 2] += a_t[r][2 * jc] * pc[jc];
                        }
                    }
                }
            }
        }
        let inv = 1.0 / per_batch as f64;
        fine.iter_mut().for_each(|v| *v *= inv);
        coarse.iter_mut().for_each(|v| *v *= inv);
        (fine, coarse)
    };
    let parts = exec.map_indexed(spec.batches, batch);

    let mean_of = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<f64> {
        let len = pick(&parts[0]).len();
        (0..len)
            .map(|n| {
                let mut s = NeumaierSum::new();
                for part in &parts {
                    s.add(pick(part)[n]);
                }
                s.value() / parts.len() as f64
            })
            .collect()
    };
    let fine = mean_of(&|p| &p.0);
    let coarse = mean_of(&|p| &p.1);
    Ok(LemmaGrid {
        u: unflat(&fine, &xs, &ts, h),
        coarse: unflat(&coarse, &xs_c, &ts_c, 2.0 * h),
        batch_means: parts.into_iter().map(|p| p.0).collect(),
        n_paths,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaProbe {
    pub x: f64,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub diff: f64,
    /// Outer-path and grid noise combined.
    pub stderr: f64,
    pub outer_stderr: f64,
    pub grid_stderr: f64,
    /// Richardson estimate of the `O(h^2 + dt^2)` bias in `diff`.
    pub grid_bias: f64,
    /// `grid_bias / h^2`.
    pub bias_constant: f64,
    pub passed: bool,
}

struct OuterChunk {
    diffs: Vec<f64>,
    coarse_diffs: Vec<f64>,
    lhs: NeumaierSum,
    rhs: NeumaierSum,
    weights: Vec<f64>,
}

/// Evaluates both sides at every probe with `n_paths` fresh paths.
pub fn check_identity<E: Executor>(
    inst: &LemmaInstance,
    grid: &LemmaGrid,
    n_paths: usize,
    seed: u64,
    exec: &E,
) -> Result<Vec<LemmaProbe>, LemmaError> {
    inst.validate()?;
    if n_paths < 2 {
        return Err(LemmaError::InvalidInstance("need at least 2 outer paths"));
    }
    let u = &grid.u;
    let uf = flat(u);
    let uc = flat(&grid.coarse);
    let dt_grid = u.ts[1] - u.ts[0];
    let k = inst.k;
    let chunks = n_paths.min(64);

    inst.probes
        .iter()
        .enumerate()
        .map(|(probe_idx, &(x, t))| {
            let outside = LemmaError::PathOutsideGrid { x, t };
            let st0 = stencil(u, t, x).ok_or(LemmaError::ProbeOutsideGrid { x, t })?;
            let st0c = stencil(&grid.coarse, t, x).ok_or(LemmaError::ProbeOutsideGrid { x, t })?;
            let half = math::round(t / (2.0 * dt_grid)) as usize;
            let steps = 2 * half;
            let ds = if steps > 0 { t / steps as f64 } else { 0.0 };
            let sq = math::sqrt(ds);
            let seed = derive_seed(seed, probe_idx as u64);

            let chunk = |c: usize| -> Result<OuterChunk, LemmaError> {
                let lo = c * n_paths / chunks;
                let hi = (c + 1) * n_paths / chunks;
                let mut out = OuterChunk {
                    diffs: Vec::with_capacity(hi - lo),
                    coarse_diffs: Vec::with_capacity(hi - lo),
                    lhs: NeumaierSum::new(),
                    rhs: NeumaierSum::new(),
                    weights: vec![0.0; uf.len()],
                };
                let scale = 1.0 / n_paths as f64;
                let mut path = vec![x; steps + 1];
                for p in lo..hi {
                    let mut rng = TreeRng::new(seed, p as u64);
                    for m in 1..=steps {
                        path[m] = path[m - 1] + sq * rng.normal();
                    }
                    let mut lhs = apply(&uf, &st0);
                    let mut lhs_c = apply(&uc, &st0c);
                    for &(i, w) in &st0 {
                        out.weights[i] += w * scale;
                    }
                    let mut rhs = inst.g.value(path[steps]);
                    let mut rhs_c = rhs;
                    for m in 0..=steps {
                        let s = m as f64 * ds;
                        let tw = if m == 0 || m == steps { 0.5 } else { 1.0 };
                        let st = stencil(u, t - s, path[m]).ok_or(outside.clone())?;
                        let wf = k * ds * tw;
                        lhs += wf * apply(&uf, &st);
                        for &(i, w) in &st {
                            out.weights[i] += wf * w * scale;
                        }
                        let phi = inst.phi(path[m], t - s);
                        rhs += wf * phi;
                        if m % 2 == 0 {
                            let wc = k * 2.0 * ds * tw;
                            let stc =
                                stencil(&grid.coarse, t - s, path[m]).ok_or(outside.clone())?;
                            lhs_c += wc * apply(&uc, &stc);
                            rhs_c += wc * phi;
                        }
                    }
                    out.lhs.add(lhs);
                    out.rhs.add(rhs);
                    out.diffs.push(lhs - rhs);
                    out.coarse_diffs.push(lhs_c - rhs_c);
                }
                Ok(out)
            };
            let parts: Result<Vec<OuterChunk>, LemmaError> =
                exec.map_indexed(chunks, chunk).into_iter().collect();
            let parts = parts?;

            let mut lhs = NeumaierSum::new();
            let mut rhs = NeumaierSum::new();
            let mut weights = vec![0.0; uf.len()];
            for part in &parts {
                lhs.add(part.lhs.value());
                rhs.add(part.rhs.value());
                for (a, b) in weights.iter_mut().zip(&part.weights) {
                    *a += b;
                }
            }
            let d = mean_var(parts.iter().flat_map(|p| p.diffs.iter().copied()));
            let dc = mean_var(parts.iter().flat_map(|p| p.coarse_diffs.iter().copied()));
            // the grid enters the left side through sum_n weights[n] u[n]
            let batch_lhs: Vec<f64> = grid
                .batch_means
                .iter()
                .map(|bm| weights.iter().zip(bm).map(|(w, v)| w * v).sum())
                .collect();
            let bv = mean_var(batch_lhs.iter().copied());
            let grid_var = bv.var / grid.batches() as f64;
            let outer_stderr = d.stderr();
            let stderr = math::sqrt(outer_stderr * outer_stderr + grid_var);
            // second order: coarse bias ~ 4x fine bias
            let grid_bias = (dc.mean - d.mean) / 3.0;
            let diff = d.mean;
            Ok(LemmaProbe {
                x,
                t,
                lhs: lhs.value() / n_paths as f64,
                rhs: rhs.value() / n_paths as f64,
                diff,
                stderr,
                outer_stderr,
                grid_stderr: math::sqrt(grid_var),
                grid_bias,
                bias_constant: grid_bias / (u.h * u.h),
                passed: diff.abs() <= 3.0 * stderr + grid_bias.abs(),
            })
        })
        .collect()
}
