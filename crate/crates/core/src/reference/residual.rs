//! Monte Carlo check of `u + G psi(u) = K f` on a grid solution.
//!
//! From `(T, x)` a Brownian path runs backwards in equation time, so
//! `G psi(u)(x) = E int_0^T psi(u(T - s, xi_s), u_x(T - s, xi_s)) ds` and
//! `K f(x) = E f(xi_T)`. The residual is `|u(T, x) + G - K|`.

use alloc::vec::Vec;

use super::fd::GridSolution;
use super::ReferenceError;
use crate::calculus::Nonlinearity;
use crate::exec::Executor;
use crate::math;
use crate::rng::{derive_seed, TreeRng};
use crate::stats::mean_var;

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPoint {
    pub x: f64,
    pub u: f64,
    pub green: f64,
    pub poisson: f64,
    pub residual: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualOptions {
    pub n_paths: usize,
    /// Path time step; the time integral uses the trapezoid rule on it.
    pub dt: f64,
    pub seed: u64,
}

pub fn integral_residual<E: Executor>(
    u: &GridSolution,
    psi: &Nonlinearity,
    f: &(dyn Fn(f64) -> f64 + Sync),
    xs: &[f64],
    opts: &ResidualOptions,
    exec: &E,
) -> Result<Vec<ResidualPoint>, ReferenceError> {
    if opts.n_paths < 2 {
        return Err(ReferenceError::TooFewPaths(opts.n_paths));
    }
    let t_end = u.horizon();
    let steps = math::round(t_end / opts.dt).max(1.0) as usize;
    let ds = t_end / steps as f64;
    let sq = math::sqrt(ds);
    let skip_green = psi.is_zero();

    xs.iter()
        .enumerate()
        .map(|(j, &x)| {
            let u0 = u
                .interpolate(t_end, x)
                .ok_or(ReferenceError::OutsideGrid { t: t_end, x })?;
            let seed = derive_seed(opts.seed, j as u64);
            let path = |p: usize| -> Result<(f64, f64), ReferenceError> {
                let mut rng = TreeRng::new(seed, p as u64);
                let mut xi = x;
                let integrand = |s: f64, xi: f64| -> Result<f64, ReferenceError> {
                    if skip_green {
                        return Ok(0.0);
                    }
                    let t = t_end - s;
                    let v = u
                        .interpolate(t, xi)
                        .ok_or(ReferenceError::OutsideGrid { t, x: xi })?;
                    let ux = if psi.depends_on_ux() {
                        u.interpolate_dx(t, xi)
                            .ok_or(ReferenceError::OutsideGrid { t, x: xi })?
                    } else {
                        0.0
                    };
                    Ok(psi.eval(v, ux))
                };
                let mut green = 0.5 * integrand(0.0, xi)?;
                for k in 1..=steps {
                    xi += sq * rng.normal();
                    let w = if k == steps { 0.5 } else { 1.0 };
                    green += w * integrand(k as f64 * ds, xi)?;
                }
                Ok((green * ds, f(xi)))
            };
            let samples: Result<Vec<(f64, f64)>, ReferenceError> =
                exec.map_indexed(opts.n_paths, path).into_iter().collect();
            let samples = samples?;
            let g = mean_var(samples.iter().map(|s| s.0));
            let k = mean_var(samples.iter().map(|s| s.1));
            let d = mean_var(samples.iter().map(|s| s.0 - s.1));
            Ok(ResidualPoint {
                x,
                u: u0,
                green: g.mean,
                poisson: k.mean,
                residual: (u0 + d.mean).abs(),
                stderr: d.stderr(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{target_pde, BranchingRule, PdeDescriptor, ScalingFamily};
    use crate::data::InitialCondition;
    use crate::exec::Sequential;
    use crate::reference::fd::{solve_semilinear, Grid1D, Lateral};

    #[test]
    fn zero_solution_has_zero_residual() {
        let grid = Grid1D::new(-5.0, 5.0, 100, 0.01, 0.2);
        let psi = target_pde(&BranchingRule::kpp(), ScalingFamily::Unit)
            .unwrap()
            .numeric();
        let sol = solve_semilinear(&psi, &|_| 0.0, &Lateral::FarField, &grid).unwrap();
        let opts = ResidualOptions {
            n_paths: 50,
            dt: 0.01,
            seed: 1,
        };
        let r = integral_residual(&sol, &psi, &|_| 0.0, &[0.0], &opts, &Sequential).unwrap();
        assert_eq!(r[0].residual, 0.0);
        assert_eq!(r[0].stderr, 0.0);
    }

    #[test]
    fn heat_residual_is_noise() {
        let f = InitialCondition::gaussian(1.0, 1.0, 0.0);
        let grid = Grid1D::covering(-1.0, 1.0, 0.5, 0.05, 0.01);
        let psi = PdeDescriptor::linear().numeric();
        let sol = solve_semilinear(&psi, &|x| f.value(x), &Lateral::FarField, &grid).unwrap();
        let opts = ResidualOptions {
            n_paths: 20_000,
            dt: 0.01,
            seed: 2,
        };
        let r = integral_residual(
            &sol,
            &psi,
            &|x| f.value(x),
            &[-0.5, 0.5],
            &opts,
            &Sequential,
        )
        .unwrap();
        for p in r {
            assert!(p.residual < 3.0 * p.stderr + 1e-3, "{p:?}");
        }
    }

    #[test]
    fn kpp_residual_is_small() {
        let f = InitialCondition::gaussian(0.5, 1.0, 0.0);
        let psi = target_pde(&BranchingRule::kpp(), ScalingFamily::Unit)
            .unwrap()
            .numeric();
        let grid = Grid1D::covering(-1.0, 1.0, 0.5, 0.05, 0.01);
        let sol = solve_semilinear(&psi, &|x| f.value(x), &Lateral::FarField, &grid).unwrap();
        let opts = ResidualOptions {
            n_paths: 20_000,
            dt: 0.01,
            seed: 3,
        };
        let r = integral_residual(&sol, &psi, &|x| f.value(x), &[0.0], &opts, &Sequential).unwrap();
        assert!(r[0].residual < 1e-2, "{:?}", r[0]);
        assert!(r[0].green.abs() > 0.05);
    }

    #[test]
    fn leaving_the_grid_is_an_error() {
        let grid = Grid1D::new(-0.2, 0.2, 8, 0.01, 1.0);
        let psi = target_pde(&BranchingRule::kpp(), ScalingFamily::Unit)
            .unwrap()
            .numeric();
        let sol = solve_semilinear(&psi, &|_| 0.1, &Lateral::FarField, &grid).unwrap();
        let opts = ResidualOptions {
            n_paths: 100,
            dt: 0.01,
            seed: 4,
        };
        let r = integral_residual(&sol, &psi, &|_| 0.1, &[0.0], &opts, &Sequential);
        assert!(matches!(r, Err(ReferenceError::OutsideGrid { .. })));
    }
}
