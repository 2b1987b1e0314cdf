//! Heat semigroup of `1/2 d^2/dx^2`: `P_t f(x) = E f(x + B_t)`.

use alloc::vec::Vec;

use super::ReferenceError;
use crate::data::InitialCondition;
use crate::math;

/// Gauss-Hermite nodes and weights for `int e^{-y^2} h(y) dy`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let pim4 = 0.751_125_544_464_942_5; // pi^{-1/4}
        let m = n.div_ceil(2);
        let mut nodes = alloc::vec![0.0; n];
        let mut weights = alloc::vec![0.0; n];
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => math::sqrt(2.0 * nf + 1.0) - 1.85575 * math::powf(2.0 * nf + 1.0, -0.16667),
                1 => z - 1.14 * math::powf(nf, 0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * math::sqrt(2.0 / (jf + 1.0)) * p2 - math::sqrt(jf / (jf + 1.0)) * p3;
                }
                pp = math::sqrt(2.0 * nf) * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-14 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        Self { nodes, weights }
    }

    /// `E h(x + sqrt(t) Z)`.
    pub fn gaussian_mean(&self, x: f64, t: f64, h: impl Fn(f64) -> f64) -> f64 {
        let s = math::sqrt(2.0 * t);
        let mut acc = crate::stats::NeumaierSum::new();
        for (y, w) in self.nodes.iter().zip(&self.weights) {
            acc.add(w * h(x + s * y));
        }
        acc.value() / math::sqrt(math::PI)
    }
}

pub const DEFAULT_QUADRATURE_NODES: usize = 64;

/// `P_t f(x)`, exact for gaussian, sine and constant data and by
/// Gauss-Hermite quadrature otherwise.
pub fn heat_closed_form(x: f64, t: f64, f: &InitialCondition) -> Result<f64, ReferenceError> {
    if !(t > 0.0) {
        return Err(ReferenceError::NonPositiveTime(t));
    }
    Ok(match *f {
        InitialCondition::Gaussian {
            amplitude,
            sigma,
            center,
        } => {
            let s2 = sigma * sigma + t;
            let d = x - center;
            amplitude * sigma / math::sqrt(s2) * math::exp(-d * d / (2.0 * s2))
        }
        InitialCondition::Sine { amplitude, omega } => {
            amplitude * math::exp(-omega * omega * t / 2.0) * math::sin(omega * x)
        }
        InitialCondition::Constant(c) => c,
        InitialCondition::Polynomial { .. } => {
            heat_quadrature(x, t, |y| f.value(y), DEFAULT_QUADRATURE_NODES)?
        }
    })
}

/// `P_t h(x)` for arbitrary `h` with `n` Gauss-Hermite nodes.
pub fn heat_quadrature(
    x: f64,
    t: f64,
    h: impl Fn(f64) -> f64,
    n: usize,
) -> Result<f64, ReferenceError> {
    if !(t > 0.0) {
        return Err(ReferenceError::NonPositiveTime(t));
    }
    Ok(GaussHermite::new(n).gaussian_mean(x, t, h))
}
