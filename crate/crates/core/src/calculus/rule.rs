//! Branching rules: weighted mark transitions plus the intensity family
//! `k_beta = c * beta^(-gamma)`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use super::series::{rat, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn from_i64(s: i64) -> Option<Sign> {
        match s {
            1 => Some(Sign::Plus),
            -1 => Some(Sign::Minus),
            _ => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn as_i64(self) -> i64 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn compose(self, other: Sign) -> Sign {
        if self == other {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    pub fn flip(self) -> Sign {
        self.compose(Sign::Minus)
    }
}

/// One offspring: the sign factor it multiplies into the parent mark and
/// the number of derivatives (0 or 1) it adds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Descriptor {
    pub sign: Sign,
    pub dderiv: u8,
}

impl Descriptor {
    pub const SAME: Descriptor = Descriptor {
        sign: Sign::Plus,
        dderiv: 0,
    };
    pub const FLIP: Descriptor = Descriptor {
        sign: Sign::Minus,
        dderiv: 0,
    };

    pub const fn derivative(sign: Sign) -> Self {
        Descriptor { sign, dderiv: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkTransition {
    pub offspring: Vec<Descriptor>,
    pub weight: Rational,
}

impl MarkTransition {
    pub fn new(weight: Rational, offspring: Vec<Descriptor>) -> Self {
        Self { offspring, weight }
    }

    /// `n` unmarked copies of the parent (`n = 0` is death).
    pub fn copies(weight: Rational, n: usize) -> Self {
        Self::new(weight, vec![Descriptor::SAME; n])
    }

    pub fn has_derivative(&self) -> bool {
        self.offspring.iter().any(|d| d.dderiv > 0)
    }

    pub fn has_sign_flip(&self) -> bool {
        self.offspring.iter().any(|d| d.sign == Sign::Minus)
    }
}

/// `k_beta = c * beta^(-gamma)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Intensity {
    pub c: Rational,
    pub gamma: Rational,
}

impl Intensity {
    pub fn new(c: Rational, gamma: Rational) -> Self {
        Self { c, gamma }
    }

    pub fn rate(&self, beta: f64) -> f64 {
        let c = self.c.to_f64().unwrap_or(f64::NAN);
        if c == 0.0 {
            return 0.0;
        }
        let g = self.gamma.to_f64().unwrap_or(f64::NAN);
        c * crate::math::powf(beta, -g)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchingRule {
    pub transitions: Vec<MarkTransition>,
    pub intensity: Intensity,
    /// Probability mass dropped by truncating an infinite offspring law
    /// before renormalizing.
    pub truncation_defect: Option<Rational>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("rule has no transitions")]
    Empty,
    #[error("transition {index} has negative weight {weight}")]
    NegativeWeight { index: usize, weight: Rational },
    #[error("weights sum to {sum}, not 1 (first offending transition: {index})")]
    WeightSumMismatch { index: usize, sum: Rational },
    #[error("transition {index} adds a derivative to a multi-offspring branching")]
    MultiOffspringDerivative { index: usize },
    #[error("transition {index} has derivative increment {dderiv}; only 0 or 1 is allowed")]
    BadDerivativeIncrement { index: usize, dderiv: u8 },
    #[error("intensity needs c >= 0 and gamma >= 0, got c = {c}, gamma = {gamma}")]
    InvalidIntensity { c: Rational, gamma: Rational },
    #[error("alpha = {alpha} is out of range (1, 2]: {reason}")]
    AlphaOutOfRange { alpha: Rational, reason: String },
    #[error("truncation order must be at least 2, got {0}")]
    TruncationTooSmall(u32),
}

/// What a successful validation established about a rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub transitions: usize,
    pub weight_sum: Rational,
    pub mean_offspring: Rational,
    pub has_sign_flips: bool,
    pub has_derivatives: bool,
    pub truncation_defect: Option<Rational>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "valid rule: {} transitions, weight sum {}",
            self.transitions, self.weight_sum
        )?;
        writeln!(f, "mean offspring: {}", self.mean_offspring)?;
        writeln!(
            f,
            "sign flips: {}, derivative marks: {}",
            self.has_sign_flips, self.has_derivatives
        )?;
        if let Some(d) = &self.truncation_defect {
            writeln!(f, "truncation mass defect (renormalized away): {d}")?;
        }
        Ok(())
    }
}

impl BranchingRule {
    pub fn new(transitions: Vec<MarkTransition>, intensity: Intensity) -> Self {
        Self {
            transitions,
            intensity,
            truncation_defect: None,
        }
    }

    /// Mean offspring count `sum w_i * |offspring_i|`.
    pub fn mean_offspring(&self) -> Rational {
        self.transitions
            .iter()
            .map(|t| &t.weight * Rational::from_integer(BigInt::from(t.offspring.len())))
            .fold(Rational::zero(), |a, b| a + b)
    }

    pub fn has_derivatives(&self) -> bool {
        self.transitions.iter().any(MarkTransition::has_derivative)
    }

    pub fn has_sign_flips(&self) -> bool {
        self.transitions.iter().any(MarkTransition::has_sign_flip)
    }

    pub fn max_offspring(&self) -> usize {
        self.transitions
            .iter()
            .map(|t| t.offspring.len())
            .max()
            .unwrap_or(0)
    }

    /// Certain binary branching, `k = 1`: the McKean representation of
    /// `u_t = 1/2 u_xx + u - u^2`.
    pub fn kpp() -> Self {
        Self::new(
            vec![MarkTransition::copies(rat(1, 1), 2)],
            Intensity::new(rat(1, 1), rat(0, 1)),
        )
    }

    /// Derivative marks with and without a sign flip (1/4 each) plus binary
    /// branching (1/2), `k = 4/beta`.
    pub fn derivative_binary() -> Self {
        Self::new(
            vec![
                MarkTransition::new(rat(1, 4), vec![Descriptor::derivative(Sign::Plus)]),
                MarkTransition::new(rat(1, 4), vec![Descriptor::derivative(Sign::Minus)]),
                MarkTransition::copies(rat(1, 2), 2),
            ],
            Intensity::new(rat(4, 1), rat(1, 1)),
        )
    }

    /// Binary branching (1/10) or a sign flip (9/10), `k = 5/(2 beta^2)`.
    pub fn signed_cubic() -> Self {
        Self::new(
            vec![
                MarkTransition::copies(rat(1, 10), 2),
                MarkTransition::new(rat(9, 10), vec![Descriptor::FLIP]),
            ],
            Intensity::new(rat(5, 2), rat(2, 1)),
        )
    }
}

pub fn validate_rule(rule: &BranchingRule) -> Result<ValidationReport, RuleError> {
    if rule.transitions.is_empty() {
        return Err(RuleError::Empty);
    }
    for (index, t) in rule.transitions.iter().enumerate() {
        if t.weight.is_negative() {
            return Err(RuleError::NegativeWeight {
                index,
                weight: t.weight.clone(),
            });
        }
        for d in &t.offspring {
            if d.dderiv > 1 {
                return Err(RuleError::BadDerivativeIncrement {
                    index,
                    dderiv: d.dderiv,
                });
            }
        }
        if t.offspring.len() > 1 && t.has_derivative() {
            return Err(RuleError::MultiOffspringDerivative { index });
        }
    }
    let one = Rational::one();
    let mut running = Rational::zero();
    let mut first_over = None;
    for (index, t) in rule.transitions.iter().enumerate() {
        running += &t.weight;
        if first_over.is_none() && running > one {
            first_over = Some(index);
        }
    }
    if running != one {
        let index = first_over.unwrap_or(rule.transitions.len() - 1);
        return Err(RuleError::WeightSumMismatch {
            index,
            sum: running,
        });
    }
    let Intensity { c, gamma } = &rule.intensity;
    if c.is_negative() || gamma.is_negative() {
        return Err(RuleError::InvalidIntensity {
            c: c.clone(),
            gamma: gamma.clone(),
        });
    }
    Ok(ValidationReport {
        transitions: rule.transitions.len(),
        weight_sum: running,
        mean_offspring: rule.mean_offspring(),
        has_sign_flips: rule.has_sign_flips(),
        has_derivatives: rule.has_derivatives(),
        truncation_defect: rule.truncation_defect.clone(),
    })
}

/// Generalized binomial coefficient `C(alpha, n)`.
pub fn binomial(alpha: &Rational, n: u32) -> Rational {
    let mut acc = Rational::one();
    for i in 0..n {
        acc = acc * (alpha - Rational::from_integer(BigInt::from(i)))
            / Rational::from_integer(BigInt::from(i + 1));
    }
    acc
}

/// Raw offspring weight `p_n` of the power rule, before truncation.
pub fn power_weight(alpha: &Rational, n: u32) -> Rational {
    match n {
        0 => Rational::one() / alpha,
        1 => Rational::zero(),
        _ => {
            let sign = if n % 2 == 0 {
                Rational::one()
            } else {
                -Rational::one()
            };
            sign * binomial(alpha, n) / alpha
        }
    }
}

/// Offspring law whose generating function reproduces `u^alpha` under the
/// small-mass scaling, truncated at `truncation` offspring and renormalized.
/// Intensity `k_beta = alpha / beta^(alpha - 1)`.
pub fn rule_from_power(alpha: &Rational, truncation: u32) -> Result<BranchingRule, RuleError> {
    let one = Rational::one();
    let two = rat(2, 1);
    if *alpha <= one {
        return Err(RuleError::AlphaOutOfRange {
            alpha: alpha.clone(),
            reason: "alpha must exceed 1 for the linear term to cancel with a nonnegative p_0"
                .into(),
        });
    }
    if *alpha > two {
        // p_3 = -alpha (alpha - 1)(alpha - 2) / (6 alpha) < 0 for every alpha > 2
        let p3 = power_weight(alpha, 3);
        return Err(RuleError::AlphaOutOfRange {
            alpha: alpha.clone(),
            reason: alloc::format!(
                "branching weights lose positivity for alpha > 2 (p_3 = {p3} < 0), so they are not probabilities"
            ),
        });
    }
    if truncation < 2 {
        return Err(RuleError::TruncationTooSmall(truncation));
    }
    let raw: Vec<(usize, Rational)> = (0..=truncation)
        .map(|n| (n as usize, power_weight(alpha, n)))
        .filter(|(_, w)| !w.is_zero())
        .collect();
    let total = raw.iter().fold(Rational::zero(), |a, (_, w)| a + w);
    let defect = &one - &total;
    let transitions = raw
        .into_iter()
        .map(|(n, w)| MarkTransition::copies(w / &total, n))
        .collect();
    Ok(BranchingRule {
        transitions,
        intensity: Intensity::new(alpha.clone(), alpha - &one),
        truncation_defect: if defect.is_zero() { None } else { Some(defect) },
    })
}
