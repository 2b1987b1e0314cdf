//! Truncated series in the particle mass `beta` whose coefficients are exact
//! rational polynomials in the symbols `u` and `u_x`.
//!
//! Exponents of `beta` are rationals (intensities such as `beta^(1 - alpha)`
//! with non-integer `alpha` produce half-integer powers). A series carries a
//! *precision*: every term with exponent strictly below it is exact, and the
//! remainder is `O(beta^precision)`. `None` means the series is an exact
//! polynomial.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Signed, Zero};
use thiserror::Error;

pub type Rational = BigRational;
pub type Exponent = Ratio<i64>;

/// `u^u * (u_x)^ux`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial {
    pub u: u32,
    pub ux: u32,
}

impl Monomial {
    pub const ONE: Monomial = Monomial { u: 0, ux: 0 };
    pub const U: Monomial = Monomial { u: 1, ux: 0 };
    pub const UX: Monomial = Monomial { u: 0, ux: 1 };

    pub const fn new(u: u32, ux: u32) -> Self {
        Self { u, ux }
    }

    pub fn degree(&self) -> u32 {
        self.u + self.ux
    }

    fn mul(self, other: Monomial) -> Monomial {
        Monomial {
            u: self.u + other.u,
            ux: self.ux + other.ux,
        }
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = Vec::new();
        match self.u {
            0 => {}
            1 => parts.push("u".into()),
            n => parts.push(alloc::format!("u^{n}")),
        }
        match self.ux {
            0 => {}
            1 => parts.push("u_x".into()),
            n => parts.push(alloc::format!("u_x^{n}")),
        }
        if parts.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", parts.join("*"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeriesError {
    #[error("series has no finite precision; an infinite expansion cannot be truncated")]
    UnboundedExpansion,
    #[error("expansion argument must only contain strictly positive powers of beta")]
    NonPositiveArgument,
    #[error(
        "formal d/dx of {0} needs u_xx, which is not represented (spatial derivative remainder)"
    )]
    HigherDerivative(Monomial),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormalSeries {
    terms: BTreeMap<(Monomial, Exponent), Rational>,
    precision: Option<Exponent>,
}

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn exponent_to_f64(e: &Exponent) -> f64 {
    *e.numer() as f64 / *e.denom() as f64
}

impl FormalSeries {
    pub fn zero() -> Self {
        Self {
            terms: BTreeMap::new(),
            precision: None,
        }
    }

    /// Exact single term `coef * mono * beta^exp`.
    pub fn term(mono: Monomial, exp: Exponent, coef: Rational) -> Self {
        let mut s = Self::zero();
        s.add_term(mono, exp, coef);
        s
    }

    pub fn constant(c: Rational) -> Self {
        Self::term(Monomial::ONE, Exponent::zero(), c)
    }

    pub fn one() -> Self {
        Self::constant(Rational::one())
    }

    pub fn precision(&self) -> Option<Exponent> {
        self.precision
    }

    /// Declares the remainder `O(beta^p)` and drops terms at or above it.
    pub fn with_precision(mut self, p: Exponent) -> Self {
        self.precision = Some(match self.precision {
            Some(q) if q < p => q,
            _ => p,
        });
        self.truncate();
        self
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Exponent, &Rational)> {
        self.terms.iter().map(|((m, e), c)| (m, e, c))
    }

    pub fn coefficient(&self, mono: Monomial, exp: Exponent) -> Rational {
        self.terms
            .get(&(mono, exp))
            .cloned()
            .unwrap_or_else(Rational::zero)
    }

    /// Smallest beta exponent over nonzero terms.
    pub fn min_exponent(&self) -> Option<Exponent> {
        self.terms.keys().map(|(_, e)| *e).min()
    }

    pub fn monomials(&self) -> Vec<Monomial> {
        let mut ms: Vec<Monomial> = self.terms.keys().map(|(m, _)| *m).collect();
        ms.dedup();
        ms
    }

    fn add_term(&mut self, mono: Monomial, exp: Exponent, coef: Rational) {
        if coef.is_zero() {
            return;
        }
        if let Some(p) = self.precision {
            if exp >= p {
                return;
            }
        }
        let key = (mono, exp);
        let v = self.terms.entry(key).or_insert_with(Rational::zero);
        *v += coef;
        if v.is_zero() {
            self.terms.remove(&key);
        }
    }

    fn truncate(&mut self) {
        if let Some(p) = self.precision {
            self.terms.retain(|(_, e), _| *e < p);
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let precision = min_opt(self.precision, other.precision);
        let mut out = Self {
            terms: self.terms.clone(),
            precision,
        };
        out.truncate();
        for ((m, e), c) in &other.terms {
            out.add_term(*m, *e, c.clone());
        }
        out
    }

    pub fn neg(&self) -> Self {
        Self {
            terms: self.terms.iter().map(|(k, c)| (*k, -c.clone())).collect(),
            precision: self.precision,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: &Rational) -> Self {
        if c.is_zero() {
            // 0 * O(beta^p) is still exactly zero.
            return Self::zero();
        }
        Self {
            terms: self.terms.iter().map(|(k, v)| (*k, v * c)).collect(),
            precision: self.precision,
        }
    }

    /// Multiplies by `beta^e`.
    pub fn shift(&self, e: Exponent) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|((m, x), c)| ((*m, *x + e), c.clone()))
                .collect(),
            precision: self.precision.map(|p| p + e),
        }
    }

    /// Truncated product. The remainder of `A*B` is bounded by
    /// `min(prec(A) + minexp(B), prec(B) + minexp(A))`.
    pub fn mul(&self, other: &Self) -> Self {
        let bound = |prec: Option<Exponent>, partner: &Self| match (prec, partner.min_exponent()) {
            (Some(p), Some(m)) => Some(p + m),
            // multiplying by an exact zero leaves no remainder
            (Some(_), None) if partner.precision.is_none() => None,
            (Some(p), None) => partner.precision.map(|q| p + q).or(Some(p)),
            (None, _) => None,
        };
        let precision = min_opt(bound(self.precision, other), bound(other.precision, self));
        let mut out = Self {
            terms: BTreeMap::new(),
            precision,
        };
        for ((ma, ea), ca) in &self.terms {
            for ((mb, eb), cb) in &other.terms {
                out.add_term(ma.mul(*mb), *ea + *eb, ca * cb);
            }
        }
        out
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut acc = Self::one();
        for _ in 0..n {
            acc = acc.mul(self);
        }
        acc
    }

    /// Sum over `k >= 0` of `coeff(k) * x^k`, for `x` whose terms all carry
    /// positive beta powers; stops once `x^k` lies entirely beyond the
    /// precision of `x`.
    fn power_sum<F>(x: &Self, coeff: F) -> Result<Self, SeriesError>
    where
        F: Fn(u32) -> Rational,
    {
        let Some(min_e) = x.min_exponent() else {
            return Ok(Self::constant(coeff(0)));
        };
        if min_e <= Exponent::zero() {
            return Err(SeriesError::NonPositiveArgument);
        }
        let prec = x.precision.ok_or(SeriesError::UnboundedExpansion)?;
        let mut out = Self::constant(coeff(0)).with_precision(prec);
        let mut xk = Self::one();
        let mut k = 0u32;
        loop {
            k += 1;
            xk = xk.mul(x);
            if xk.is_zero() {
                break;
            }
            out = out.add(&xk.scale(&coeff(k)));
            if min_e * Exponent::from(k as i64) >= prec {
                break;
            }
        }
        Ok(out)
    }

    /// `exp(x)` for `x` without a beta^0 part.
    pub fn exp(&self) -> Result<Self, SeriesError> {
        Self::power_sum(self, |k| {
            let mut fact = BigInt::one();
            for i in 2..=k {
                fact *= BigInt::from(i);
            }
            Rational::new(BigInt::one(), fact)
        })
    }

    /// `log(1 + x)` for `x` without a beta^0 part.
    pub fn ln_1p(&self) -> Result<Self, SeriesError> {
        Self::power_sum(self, |k| {
            if k == 0 {
                Rational::zero()
            } else {
                let s = if k % 2 == 1 { 1 } else { -1 };
                rat(s, k as i64)
            }
        })
    }

    /// `1 / (1 - x)` for `x` without a beta^0 part.
    pub fn geometric(&self) -> Result<Self, SeriesError> {
        Self::power_sum(self, |_| Rational::one())
    }

    /// Formal `d/dx` treating `u` as a function of `x` with derivative `u_x`.
    pub fn dx(&self) -> Result<Self, SeriesError> {
        let mut out = Self {
            terms: BTreeMap::new(),
            precision: self.precision,
        };
        for ((m, e), c) in &self.terms {
            if m.ux > 0 {
                return Err(SeriesError::HigherDerivative(*m));
            }
            if m.u > 0 {
                let dm = Monomial {
                    u: m.u - 1,
                    ux: m.ux + 1,
                };
                out.add_term(dm, *e, c * Rational::from_integer(BigInt::from(m.u)));
            }
        }
        Ok(out)
    }

    /// Terms grouped by beta exponent, lowest first.
    pub fn by_exponent(&self) -> BTreeMap<Exponent, Vec<(Monomial, Rational)>> {
        let mut out: BTreeMap<Exponent, Vec<(Monomial, Rational)>> = BTreeMap::new();
        for ((m, e), c) in &self.terms {
            out.entry(*e).or_default().push((*m, c.clone()));
        }
        out
    }
}

fn min_opt(a: Option<Exponent>, b: Option<Exponent>) -> Option<Exponent> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if x < y { x } else { y }),
        (Some(x), None) | (None, Some(x)) => Some(x),
        (None, None) => None,
    }
}

/// Writes `sum c_i m_i` with the highest-degree monomials first.
pub(crate) fn fmt_polynomial(
    f: &mut fmt::Formatter<'_>,
    terms: &[(Monomial, Rational)],
) -> fmt::Result {
    if terms.is_empty() {
        return write!(f, "0");
    }
    let mut sorted: Vec<&(Monomial, Rational)> = terms.iter().collect();
    sorted.sort_by(|a, b| b.0.degree().cmp(&a.0.degree()).then(b.0.u.cmp(&a.0.u)));
    for (i, (m, c)) in sorted.iter().enumerate() {
        let neg = c.is_negative();
        let mag = c.abs();
        if i == 0 {
            if neg {
                write!(f, "-")?;
            }
        } else if neg {
            write!(f, " - ")?;
        } else {
            write!(f, " + ")?;
        }
        if *m == Monomial::ONE {
            write!(f, "{mag}")?;
        } else if mag.is_one() {
            write!(f, "{m}")?;
        } else {
            write!(f, "{mag}*{m}")?;
        }
    }
    Ok(())
}

impl fmt::Display for FormalSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let groups = self.by_exponent();
        if groups.is_empty() {
            write!(f, "0")?;
        }
        for (i, (e, terms)) in groups.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "beta^{e} * (")?;
            fmt_polynomial(f, terms)?;
            write!(f, ")")?;
        }
        if let Some(p) = self.precision {
            write!(f, " + O(beta^{p})")?;
        }
        Ok(())
    }
}
