//! Initial and lateral boundary data.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::math;

/// Highest derivative order any analytic family evaluates exactly.
pub const MAX_EVAL_DERIVATIVE: u32 = 24;

/// Analytic initial data `f` with exact derivatives.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// `amplitude * exp(-(x - center)^2 / (2 sigma^2))`
    Gaussian {
        amplitude: f64,
        sigma: f64,
        center: f64,
    },
    /// `amplitude * sin(omega x)`
    Sine {
        amplitude: f64,
        omega: f64,
    },
    /// `sum coeffs[i] x^i`
    Polynomial {
        coeffs: Vec<f64>,
    },
    Constant(f64),
}

impl InitialCondition {
    pub fn gaussian(amplitude: f64, sigma: f64, center: f64) -> Self {
        Self::Gaussian {
            amplitude,
            sigma,
            center,
        }
    }

    pub fn sine(amplitude: f64, omega: f64) -> Self {
        Self::Sine { amplitude, omega }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.derivative(0, x)
    }

    /// `f^(n)(x)`; `NaN` beyond [`MAX_EVAL_DERIVATIVE`].
    pub fn derivative(&self, n: u32, x: f64) -> f64 {
        if n > MAX_EVAL_DERIVATIVE {
            return f64::NAN;
        }
        match *self {
            InitialCondition::Gaussian {
                amplitude,
                sigma,
                center,
            } => {
                let y = (x - center) / sigma;
                // probabilists' Hermite: He_{k+1} = y He_k - k He_{k-1}
                let (mut h_prev, mut h) = (0.0, 1.0);
                for k in 0..n {
                    let next = y * h - k as f64 * h_prev;
                    h_prev = h;
                    h = next;
                }
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                amplitude * sign * h * math::exp(-0.5 * y * y) / math::powi(sigma, n)
            }
            InitialCondition::Sine { amplitude, omega } => {
                let phase = omega * x;
                let scale = amplitude * math::powi(omega, n);
                match n % 4 {
                    0 => scale * math::sin(phase),
                    1 => scale * math::cos(phase),
                    2 => -scale * math::sin(phase),
                    _ => -scale * math::cos(phase),
                }
            }
            InitialCondition::Polynomial { ref coeffs } => {
                let mut acc = 0.0;
                for (i, &c) in coeffs.iter().enumerate().rev() {
                    let i = i as u32;
                    if i < n {
                        break;
                    }
                    let falling: f64 = ((i - n + 1)..=i).map(|k| k as f64).product();
                    acc = acc * x + c * falling;
                }
                acc
            }
            InitialCondition::Constant(c) => {
                if n == 0 {
                    c
                } else {
                    0.0
                }
            }
        }
    }

    pub fn sup_norm_hint(&self) -> f64 {
        match self {
            InitialCondition::Gaussian { amplitude, .. } => amplitude.abs(),
            InitialCondition::Sine { amplitude, .. } => amplitude.abs(),
            InitialCondition::Constant(c) => c.abs(),
            InitialCondition::Polynomial { .. } => f64::INFINITY,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match self {
            InitialCondition::Gaussian { amplitude, .. } => *amplitude >= 0.0,
            InitialCondition::Constant(c) => *c >= 0.0,
            InitialCondition::Sine { amplitude, .. } => *amplitude == 0.0,
            InitialCondition::Polynomial { coeffs } => coeffs.iter().all(|c| *c == 0.0),
        }
    }

    pub fn negated(&self) -> Self {
        match self {
            InitialCondition::Gaussian {
                amplitude,
                sigma,
                center,
            } => InitialCondition::Gaussian {
                amplitude: -amplitude,
                sigma: *sigma,
                center: *center,
            },
            InitialCondition::Sine { amplitude, omega } => InitialCondition::Sine {
                amplitude: -amplitude,
                omega: *omega,
            },
            InitialCondition::Polynomial { coeffs } => InitialCondition::Polynomial {
                coeffs: coeffs.iter().map(|c| -c).collect(),
            },
            InitialCondition::Constant(c) => InitialCondition::Constant(-c),
        }
    }
}

impl fmt::Display for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialCondition::Gaussian {
                amplitude,
                sigma,
                center,
            } => {
                write!(f, "gaussian({amplitude}, {sigma}, {center})")
            }
            InitialCondition::Sine { amplitude, omega } => write!(f, "sine({amplitude}, {omega})"),
            InitialCondition::Polynomial { coeffs } => write!(f, "polynomial({coeffs:?})"),
            InitialCondition::Constant(c) => write!(f, "constant({c})"),
        }
    }
}

pub type SpaceTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Lateral boundary data `g(t, x)` in equation time.
#[derive(Clone)]
pub enum BoundaryData {
    Constant(f64),
    /// Time-independent `g(t, x) = h(x)`.
    Spatial(InitialCondition),
    Function(SpaceTimeFn),
}

impl BoundaryData {
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            BoundaryData::Constant(c) => *c,
            BoundaryData::Spatial(h) => h.value(x),
            BoundaryData::Function(g) => g(t, x),
        }
    }

    /// Largest jump between consecutive samples of `g(., x)` on `[0, horizon]`.
    pub fn max_time_jump(&self, x: f64, horizon: f64, samples: usize) -> f64 {
        let n = samples.max(2);
        let mut worst: f64 = 0.0;
        let mut prev = self.eval(0.0, x);
        for i in 1..n {
            let t = horizon * i as f64 / (n - 1) as f64;
            let v = self.eval(t, x);
            worst = worst.max((v - prev).abs());
            prev = v;
        }
        worst
    }
}

impl fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryData::Constant(c) => write!(f, "Constant({c})"),
            BoundaryData::Spatial(h) => write!(f, "Spatial({h})"),
            BoundaryData::Function(_) => write!(f, "Function(..)"),
        }
    }
}
