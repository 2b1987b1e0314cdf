//! Order-fixed compensated reductions.
//!
//! Every Monte Carlo mean in the crate goes through [`NeumaierSum`] over a
//! vector ordered by tree index, so results do not depend on how the trees
//! were scheduled.

/// Kahan-Babuska-Neumaier summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut s = NeumaierSum::new();
    for x in xs {
        s.add(x);
    }
    s.value()
}

/// Sample mean and unbiased sample variance, two-pass with compensation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanVar {
    pub mean: f64,
    pub var: f64,
    pub n: usize,
}

impl MeanVar {
    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        crate::math::sqrt(self.var / self.n as f64)
    }
}

pub fn mean_var<I>(xs: I) -> MeanVar
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let it = xs.into_iter();
    let mut n = 0usize;
    let mut s = NeumaierSum::new();
    for x in it.clone() {
        s.add(x);
        n += 1;
    }
    if n == 0 {
        return MeanVar {
            mean: f64::NAN,
            var: f64::NAN,
            n,
        };
    }
    let mean = s.value() / n as f64;
    let mut q = NeumaierSum::new();
    for x in it {
        let d = x - mean;
        q.add(d * d);
    }
    let var = if n > 1 {
        q.value() / (n - 1) as f64
    } else {
        0.0
    };
    MeanVar { mean, var, n }
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return f64::NAN;
    }
    let mx = compensated_sum(xs[..n].iter().copied()) / n as f64;
    let my = compensated_sum(ys[..n].iter().copied()) / n as f64;
    let mut sxy = NeumaierSum::new();
    let mut sxx = NeumaierSum::new();
    for i in 0..n {
        sxy.add((xs[i] - mx) * (ys[i] - my));
        sxx.add((xs[i] - mx) * (xs[i] - mx));
    }
    sxy.value() / sxx.value()
}
