//! Crank-Nicolson solver for `u_t = 1/2 u_xx - psi(u, u_x)`.
//!
//! Diffusion is implicit (Crank-Nicolson); `psi` is explicit with a
//! predictor-corrector (Heun) step, so the implicit stage stays a constant
//! tridiagonal solve. `u_x` inside `psi` is a central difference.

use alloc::vec;
use alloc::vec::Vec;

use super::ReferenceError;
use crate::calculus::{Nonlinearity, ScalingFamily};
use crate::data::{BoundaryData, InitialCondition};
use crate::math;

pub const DEFAULT_MAX_RATIO: f64 = 400.0;
pub const DEFAULT_BLOWUP: f64 = 1e8;
/// Padding added on each side of the probe range for free-space problems:
/// `6 sqrt(T) + 1` keeps boundary influence far below `1e-4`.
pub fn cauchy_padding(horizon: f64) -> f64 {
    6.0 * math::sqrt(horizon) + 1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    pub x_lo: f64,
    pub x_hi: f64,
    /// Number of intervals.
    pub nx: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Upper bound on `dt / h^2`.
    pub max_ratio: f64,
    pub blowup_threshold: f64,
    /// Keep every `save_every`-th time level (the final level is always kept).
    pub save_every: usize,
}

impl Grid1D {
    pub fn new(x_lo: f64, x_hi: f64, nx: usize, dt: f64, horizon: f64) -> Self {
        Self {
            x_lo,
            x_hi,
            nx,
            dt,
            horizon,
            max_ratio: DEFAULT_MAX_RATIO,
            blowup_threshold: DEFAULT_BLOWUP,
            save_every: 1,
        }
    }

    /// Grid with spacing close to `h` covering `[lo, hi]` plus free-space padding.
    pub fn covering(lo: f64, hi: f64, horizon: f64, h: f64, dt: f64) -> Self {
        let pad = cauchy_padding(horizon);
        let width = hi - lo + 2.0 * pad;
        let nx = math::round(width / h).max(2.0) as usize;
        let nx = nx + nx % 2;
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * nx as f64 * h;
        Self::new(mid - half, mid + half, nx, dt, horizon)
    }

    pub fn h(&self) -> f64 {
        (self.x_hi - self.x_lo) / self.nx as f64
    }

    pub fn steps(&self) -> usize {
        math::round(self.horizon / self.dt).max(1.0) as usize
    }

    fn validate(&self) -> Result<(), ReferenceError> {
        if !(self.x_lo < self.x_hi) || self.nx < 2 {
            return Err(ReferenceError::InvalidGrid(
                "need x_lo < x_hi and at least 2 intervals",
            ));
        }
        if !(self.dt > 0.0 && self.horizon > 0.0) {
            return Err(ReferenceError::InvalidGrid(
                "dt and horizon must be positive",
            ));
        }
        let steps = self.horizon / self.dt;
        if (steps - math::round(steps)).abs() > 1e-6 * steps.max(1.0) {
            return Err(ReferenceError::InvalidGrid(
                "horizon must be a multiple of dt",
            ));
        }
        let ratio = self.dt / (self.h() * self.h());
        if ratio > self.max_ratio {
            return Err(ReferenceError::StabilityViolation {
                ratio,
                max: self.max_ratio,
            });
        }
        if self.save_every == 0 {
            return Err(ReferenceError::InvalidGrid("save_every must be at least 1"));
        }
        Ok(())
    }
}

/// Treatment of the ends of the grid.
#[derive(Debug, Clone)]
pub enum Lateral {
    Dirichlet(BoundaryData),
    /// Period `x_hi - x_lo`; the node at `x_hi` is identified with `x_lo`.
    Periodic,
    /// Free-space stand-in: end values follow `du/dt = -psi(u, 0)`.
    FarField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    /// `values[j][i] ~ u(ts[j], xs[i])`.
    pub values: Vec<Vec<f64>>,
    pub h: f64,
    pub periodic: bool,
    pub scheme: &'static str,
}

impl GridSolution {
    pub fn horizon(&self) -> f64 {
        *self.ts.last().unwrap_or(&0.0)
    }

    pub fn final_row(&self) -> &[f64] {
        self.values.last().map(|r| r.as_slice()).unwrap_or(&[])
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn x_period(&self) -> f64 {
        self.h * self.xs.len() as f64
    }

    /// Linear interpolation within one saved time level.
    pub fn interpolate_row(&self, j: usize, x: f64) -> Option<f64> {
        let row = &self.values[j];
        let n = self.xs.len();
        let x0 = self.xs[0];
        let mut s = (x - x0) / self.h;
        if self.periodic {
            let p = self.x_period() / self.h;
            s -= p * math::floor(s / p);
            let i = (math::floor(s) as usize).min(n - 1);
            let w = s - i as f64;
            return Some((1.0 - w) * row[i] + w * row[(i + 1) % n]);
        }
        if !(s >= 0.0 && s <= (n - 1) as f64) {
            return None;
        }
        let i = (math::floor(s) as usize).min(n - 2);
        let w = s - i as f64;
        Some((1.0 - w) * row[i] + w * row[i + 1])
    }

    /// Bilinear interpolation; `None` outside the grid.
    pub fn interpolate(&self, t: f64, x: f64) -> Option<f64> {
        let nt = self.ts.len();
        let t_end = self.horizon();
        if !(t >= -1e-12 && t <= t_end * (1.0 + 1e-12) + 1e-12) {
            return None;
        }
        if nt == 1 {
            return self.interpolate_row(0, x);
        }
        let j = self.ts.partition_point(|&s| s <= t).clamp(1, nt - 1) - 1;
        let (t0, t1) = (self.ts[j], self.ts[j + 1]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        let a = self.interpolate_row(j, x)?;
        if w == 0.0 {
            return Some(a);
        }
        let b = self.interpolate_row(j + 1, x)?;
        Some((1.0 - w) * a + w * b)
    }

    /// Central difference of the interpolant with step `h`.
    pub fn interpolate_dx(&self, t: f64, x: f64) -> Option<f64> {
        let a = self.interpolate(t, x + self.h)?;
        let b = self.interpolate(t, x - self.h)?;
        Some((a - b) / (2.0 * self.h))
    }

    /// `(t, x, u)` triples, time-major.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.ts
            .iter()
            .zip(&self.values)
            .flat_map(move |(&t, row)| self.xs.iter().zip(row).map(move |(&x, &u)| (t, x, u)))
    }
}

/// Initial data of the finite-`beta` equation solved exactly by the
/// estimator for a polynomial branching function.
pub fn transformed_initial(
    f: &InitialCondition,
    mode: ScalingFamily,
    beta: f64,
) -> impl Fn(f64) -> f64 + '_ {
    move |x| {
        let v = f.value(x);
        match mode {
            ScalingFamily::Unit => -math::expm1(-v),
            ScalingFamily::Scaling1 => -math::expm1(-beta * v) / beta,
            ScalingFamily::Scaling2 => math::sinh(beta * v) / beta,
        }
    }
}

/// Solves constant-coefficient tridiagonal `off x_{i-1} + diag x_i + off x_{i+1} = d_i`
/// in place.
fn thomas(diag: f64, off: f64, d: &mut [f64], scratch: &mut [f64]) {
    let n = d.len();
    if n == 0 {
        return;
    }
    scratch[0] = off / diag;
    d[0] /= diag;
    for i in 1..n {
        let m = diag - off * scratch[i - 1];
        scratch[i] = off / m;
        d[i] = (d[i] - off * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= scratch[i] * d[i + 1];
    }
}

/// Cyclic variant (corner entries `off`) by Sherman-Morrison.
fn thomas_cyclic(diag: f64, off: f64, d: &mut [f64], scratch: &mut [f64], z: &mut [f64]) {
    let n = d.len();
    let gamma = -diag;
    // A = T + u v^T with u = (gamma, 0.., off), v = (1, 0.., off/gamma)
    let b0 = diag - gamma;
    let bn = diag - off * off / gamma;
    let solve = |rhs: &mut [f64], scratch: &mut [f64]| {
        scratch[0] = off / b0;
        rhs[0] /= b0;
        for i in 1..n {
            let b = if i == n - 1 { bn } else { diag };
            let m = b - off * scratch[i - 1];
            scratch[i] = off / m;
            rhs[i] = (rhs[i] - off * rhs[i - 1]) / m;
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= scratch[i] * rhs[i + 1];
        }
    };
    solve(d, scratch);
    z.iter_mut().for_each(|v| *v = 0.0);
    z[0] = gamma;
    z[n - 1] = off;
    solve(z, scratch);
    let fact = (d[0] + off * d[n - 1] / gamma) / (1.0 + z[0] + off * z[n - 1] / gamma);
    for i in 0..n {
        d[i] -= fact * z[i];
    }
}

struct Stepper<'a> {
    psi: &'a Nonlinearity,
    periodic: bool,
    h: f64,
    dt: f64,
    mu: f64,
    scratch: Vec<f64>,
    z: Vec<f64>,
}

impl Stepper<'_> {
    /// `psi(u_i, u_x)` at every node; ends of non-periodic grids use `u_x = 0`.
    fn nonlinear(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        for i in 0..n {
            let ux = if self.periodic {
                (u[(i + 1) % n] - u[(i + n - 1) % n]) / (2.0 * self.h)
            } else if i == 0 || i == n - 1 {
                0.0
            } else {
                (u[i + 1] - u[i - 1]) / (2.0 * self.h)
            };
            out[i] = self.psi.eval(u[i], ux);
        }
    }

    /// One Crank-Nicolson step with frozen nonlinear term `nl`; `ends` are
    /// the new end values for non-periodic grids.
    fn cn(&mut self, u: &[f64], nl: &[f64], ends: (f64, f64), out: &mut [f64]) {
        let n = u.len();
        let mu = self.mu;
        if self.periodic {
            for i in 0..n {
                let lap = u[(i + 1) % n] - 2.0 * u[i] + u[(i + n - 1) % n];
                out[i] = u[i] + mu * lap - self.dt * nl[i];
            }
            thomas_cyclic(1.0 + 2.0 * mu, -mu, out, &mut self.scratch, &mut self.z);
            return;
        }
        out[0] = ends.0;
        out[n - 1] = ends.1;
        for i in 1..n - 1 {
            out[i] = u[i] + mu * (u[i + 1] - 2.0 * u[i] + u[i - 1]) - self.dt * nl[i];
        }
        out[1] += mu * ends.0;
        out[n - 2] += mu * ends.1;
        thomas(1.0 + 2.0 * mu, -mu, &mut out[1..n - 1], &mut self.scratch);
    }
}

pub fn solve_semilinear(
    psi: &Nonlinearity,
    initial: &dyn Fn(f64) -> f64,
    lateral: &Lateral,
    grid: &Grid1D,
) -> Result<GridSolution, ReferenceError> {
    grid.validate()?;
    let periodic = matches!(lateral, Lateral::Periodic);
    let h = grid.h();
    let steps = grid.steps();
    let dt = grid.horizon / steps as f64;
    let n = if periodic { grid.nx } else { grid.nx + 1 };
    let xs: Vec<f64> = (0..n).map(|i| grid.x_lo + i as f64 * h).collect();

    let mut u: Vec<f64> = xs.iter().map(|&x| initial(x)).collect();
    if let Lateral::Dirichlet(g) = lateral {
        u[0] = g.eval(0.0, xs[0]);
        u[n - 1] = g.eval(0.0, xs[n - 1]);
    }
    let mut ts = vec![0.0];
    let mut values = vec![u.clone()];

    let mut st = Stepper {
        psi,
        periodic,
        h,
        dt,
        mu: dt / (4.0 * h * h),
        scratch: vec![0.0; n],
        z: vec![0.0; n],
    };
    let mut n0 = vec![0.0; n];
    let mut n1 = vec![0.0; n];
    let mut pred = vec![0.0; n];
    let mut next = vec![0.0; n];
    for step in 1..=steps {
        let t_next = step as f64 * dt;
        st.nonlinear(&u, &mut n0);
        let (ends_pred, ends_corr) = match lateral {
            Lateral::Dirichlet(g) => {
                let e = (g.eval(t_next, xs[0]), g.eval(t_next, xs[n - 1]));
                (e, e)
            }
            Lateral::Periodic => ((0.0, 0.0), (0.0, 0.0)),
            Lateral::FarField => {
                let heun = |b: f64| {
                    let f0 = psi.eval(b, 0.0);
                    let bp = b - dt * f0;
                    (bp, b - 0.5 * dt * (f0 + psi.eval(bp, 0.0)))
                };
                let (l, r) = (heun(u[0]), heun(u[n - 1]));
                ((l.0, r.0), (l.1, r.1))
            }
        };
        st.cn(&u, &n0, ends_pred, &mut pred);
        st.nonlinear(&pred, &mut n1);
        for (a, b) in n1.iter_mut().zip(&n0) {
            *a = 0.5 * (*a + b);
        }
        st.cn(&u, &n1, ends_corr, &mut next);
        core::mem::swap(&mut u, &mut next);

        let max_abs = u.iter().fold(0.0f64, |m, v| {
            if v.is_finite() {
                m.max(v.abs())
            } else {
                f64::INFINITY
            }
        });
        if max_abs > grid.blowup_threshold {
            return Err(ReferenceError::BlowUpDetected { t: t_next, max_abs });
        }
        if step % grid.save_every == 0 || step == steps {
            ts.push(t_next);
            values.push(u.clone());
        }
    }
    Ok(GridSolution {
        xs,
        ts,
        values,
        h,
        periodic,
        scheme: "crank-nicolson/heun",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{rat, BranchingRule, Monomial, PdeDescriptor};
    use crate::reference::heat_closed_form;

    fn heat() -> Nonlinearity {
        PdeDescriptor::linear().numeric()
    }

    fn kpp() -> Nonlinearity {
        crate::calculus::target_pde(&BranchingRule::kpp(), ScalingFamily::Unit)
            .unwrap()
            .numeric()
    }

    #[test]
    fn thomas_solves_small_systems() {
        // [2 1 0; 1 2 1; 0 1 2] x = [4 8 8] -> x = [1 2 3]
        let mut d = [4.0, 8.0, 8.0];
        let mut s = [0.0; 3];
        thomas(2.0, 1.0, &mut d, &mut s);
        for (a, b) in d.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-14);
        }
        // cyclic [3 1 1; 1 3 1; 1 1 3] x = [5 5 5] -> x = 1
        let mut d = [5.0, 5.0, 5.0];
        let mut z = [0.0; 3];
        thomas_cyclic(3.0, 1.0, &mut d, &mut s, &mut z);
        for a in d {
            assert!((a - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn heat_matches_closed_form_at_second_order() {
        let f = InitialCondition::gaussian(1.0, 0.5, 0.0);
        let t = 0.5;
        let err = |h: f64| {
            let grid = Grid1D::covering(-1.0, 1.0, t, h, h);
            let sol =
                solve_semilinear(&heat(), &|x| f.value(x), &Lateral::FarField, &grid).unwrap();
            [-1.0, -0.5, 0.0, 0.5, 1.0]
                .iter()
                .map(|&x| {
                    (sol.interpolate(t, x).unwrap() - heat_closed_form(x, t, &f).unwrap()).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.05), err(0.025));
        let order = (e1 / e2).log2();
        assert!(e2 < 1e-4, "{e2}");
        assert!((1.9..2.1).contains(&order), "order {order}");
    }

    #[test]
    fn periodic_sine_decays_at_the_fourier_rate() {
        let f = InitialCondition::sine(1.0, 1.0);
        let period = 2.0 * core::f64::consts::PI;
        let grid = Grid1D::new(0.0, period, 128, 0.01, 0.5);
        let sol = solve_semilinear(&heat(), &|x| f.value(x), &Lateral::Periodic, &grid).unwrap();
        for &x in &[0.3, 1.7, 4.0] {
            let want = heat_closed_form(x, 0.5, &f).unwrap();
            assert!((sol.interpolate(0.5, x).unwrap() - want).abs() < 2e-3);
        }
    }

    #[test]
    fn kpp_fixed_points() {
        let grid = Grid1D::new(-3.0, 3.0, 60, 0.01, 1.0);
        let zero = solve_semilinear(&kpp(), &|_| 0.0, &Lateral::FarField, &grid).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
        let one = solve_semilinear(&kpp(), &|_| 1.0, &Lateral::FarField, &grid).unwrap();
        for v in one.values.iter().flatten() {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn kpp_constant_data_follows_logistic_ode() {
        // u' = u - u^2, u(0) = 0.2: u(t) = 1 / (1 + 4 e^{-t})
        let grid = Grid1D::new(-2.0, 2.0, 40, 0.005, 1.0);
        let sol = solve_semilinear(&kpp(), &|_| 0.2, &Lateral::FarField, &grid).unwrap();
        let want = 1.0 / (1.0 + 4.0 * (-1.0f64).exp());
        for v in sol.final_row() {
            assert!((v - want).abs() < 1e-6);
        }
    }

    #[test]
    fn comparison_principle_for_u_squared() {
        let pde = PdeDescriptor::new([(Monomial { u: 2, ux: 0 }, rat(1, 1))]);
        let f = InitialCondition::gaussian(1.0, 1.0, 0.0);
        let grid = Grid1D::covering(-2.0, 2.0, 0.5, 0.05, 0.01);
        let sol =
            solve_semilinear(&pde.numeric(), &|x| f.value(x), &Lateral::FarField, &grid).unwrap();
        for v in sol.values.iter().flatten() {
            assert!(*v >= -1e-12 && *v <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn dirichlet_data_is_imposed() {
        let g = BoundaryData::Constant(0.3);
        let grid = Grid1D::new(-1.0, 1.0, 40, 0.01, 0.2);
        let sol = solve_semilinear(&heat(), &|_| 0.3, &Lateral::Dirichlet(g), &grid).unwrap();
        for v in sol.values.iter().flatten() {
            assert!((v - 0.3).abs() < 1e-14);
        }
    }

    #[test]
    fn cubic_growth_blows_up() {
        // u_t = 1/2 u_xx + u^3
        let pde =
            crate::calculus::target_pde(&BranchingRule::signed_cubic(), ScalingFamily::Scaling2)
                .unwrap();
        let grid = Grid1D::new(-1.0, 1.0, 20, 0.01, 2.0);
        let r = solve_semilinear(&pde.numeric(), &|_| 3.0, &Lateral::FarField, &grid);
        assert!(matches!(r, Err(ReferenceError::BlowUpDetected { .. })));
    }

    #[test]
    fn grid_validation() {
        let mut grid = Grid1D::new(0.0, 1.0, 100, 1.0, 1.0);
        assert!(matches!(
            solve_semilinear(&heat(), &|_| 0.0, &Lateral::FarField, &grid),
            Err(ReferenceError::StabilityViolation { .. })
        ));
        grid.dt = 0.3;
        assert!(matches!(
            solve_semilinear(&heat(), &|_| 0.0, &Lateral::FarField, &grid),
            Err(ReferenceError::InvalidGrid(_))
        ));
    }

    #[test]
    fn interpolation_is_exact_for_linear_data() {
        let grid = Grid1D::new(-1.0, 1.0, 20, 0.01, 0.1);
        let sol = solve_semilinear(&heat(), &|x| 2.0 * x + 1.0, &Lateral::FarField, &grid).unwrap();
        // far-field ends keep their values; a linear profile is then stationary
        assert!((sol.interpolate(0.055, 0.33).unwrap() - 1.66).abs() < 1e-12);
        assert!((sol.interpolate_dx(0.1, 0.2).unwrap() - 2.0).abs() < 1e-12);
        assert!(sol.interpolate(0.05, 1.5).is_none());
        assert_eq!(sol.rows().count(), sol.ts.len() * sol.xs.len());
    }
}
