//! Rule files and built-in rule names.
//!
//! A rule file is TOML with exact rational weights:
//!
//! ```toml
//! [intensity]          # k_beta = c * beta^(-gamma)
//! c = "5/2"
//! gamma = "2"
//!
//! [[transitions]]
//! weight = "1/10"
//! offspring = [{ sign = 1, dderiv = 0 }, { sign = 1, dderiv = 0 }]
//!
//! [[transitions]]
//! weight = "9/10"
//! offspring = [{ sign = -1, dderiv = 0 }]
//! ```

use std::path::Path;
use std::str::FromStr;

use branchflow_core::calculus::{rule_from_power, BranchingRule, Descriptor, Intensity, MarkTransition, Rational, Sign};
use num_bigint::BigInt;
use num_traits::Zero;
use serde::Deserialize;

use crate::config::ConfigError;

pub const BUILTIN_NAMES: &[&str] = &["kpp", "power-alpha", "eq3.3", "derivative-binary", "eq3.11", "signed-cubic"];
pub const DEFAULT_TRUNCATION: u32 = 8;

/// A number written either as a TOML number or as `"p/q"` / decimal text.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum RationalText {
    Int(i64),
    Float(f64),
    Text(String),
}

impl RationalText {
    pub fn to_rational(&self) -> Result<Rational, String> {
        match self {
            RationalText::Int(i) => Ok(Rational::from_integer(BigInt::from(*i))),
            RationalText::Float(f) => parse_rational(&format!("{f}")),
            RationalText::Text(s) => parse_rational(s),
        }
    }
}

/// `"3"`, `"-5/2"` or an exact decimal such as `"0.125"`.
pub fn parse_rational(s: &str) -> Result<Rational, String> {
    let s = s.trim();
    let bad = || format!("`{s}` is not a rational number (use p/q or a decimal)");
    if let Some((n, d)) = s.split_once('/') {
        let n = BigInt::from_str(n.trim()).map_err(|_| bad())?;
        let d = BigInt::from_str(d.trim()).map_err(|_| bad())?;
        if d.is_zero() {
            return Err(format!("`{s}` has a zero denominator"));
        }
        return Ok(Rational::new(n, d));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    let numer = BigInt::from_str(if digits.is_empty() { "0" } else { &digits }).map_err(|_| bad())?;
    let denom = num_traits::pow(BigInt::from(10), frac.len());
    let r = Rational::new(numer, denom);
    Ok(if neg { -r } else { r })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffspringText {
    pub sign: i64,
    #[serde(default)]
    pub dderiv: u8,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionText {
    pub weight: RationalText,
    #[serde(default)]
    pub offspring: Vec<OffspringText>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntensityText {
    pub c: RationalText,
    pub gamma: RationalText,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleText {
    pub intensity: IntensityText,
    pub transitions: Vec<TransitionText>,
}

impl RuleText {
    /// Builds the rule without validating weights; `validate_rule` does that.
    pub fn to_rule(&self) -> Result<BranchingRule, ConfigError> {
        let field = |f: String| move |m: String| ConfigError::field(f.clone(), m);
        let mut transitions = Vec::with_capacity(self.transitions.len());
        for (i, t) in self.transitions.iter().enumerate() {
            let weight = t.weight.to_rational().map_err(field(format!("transitions[{i}].weight")))?;
            let mut offspring = Vec::with_capacity(t.offspring.len());
            for (j, o) in t.offspring.iter().enumerate() {
                let sign = Sign::from_i64(o.sign).ok_or_else(|| {
                    ConfigError::field(format!("transitions[{i}].offspring[{j}].sign"), "must be 1 or -1")
                })?;
                offspring.push(Descriptor { sign, dderiv: o.dderiv });
            }
            transitions.push(MarkTransition::new(weight, offspring));
        }
        let c = self.intensity.c.to_rational().map_err(field("intensity.c".into()))?;
        let gamma = self.intensity.gamma.to_rational().map_err(field("intensity.gamma".into()))?;
        Ok(BranchingRule::new(transitions, Intensity::new(c, gamma)))
    }
}

pub fn load_rule_file(path: &Path) -> Result<BranchingRule, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::field("rule.file", format!("cannot read {}: {e}", path.display())))?;
    let parsed: RuleText = toml::from_str(&text).map_err(|e| ConfigError::parse(path, e))?;
    parsed.to_rule()
}

/// Resolves a built-in name; `alpha` and `truncation` apply to `power-alpha`.
pub fn builtin(name: &str, alpha: Option<&Rational>, truncation: Option<u32>) -> Result<BranchingRule, ConfigError> {
    match name {
        "kpp" => Ok(BranchingRule::kpp()),
        "eq3.3" | "derivative-binary" => Ok(BranchingRule::derivative_binary()),
        "eq3.11" | "signed-cubic" => Ok(BranchingRule::signed_cubic()),
        "power-alpha" => {
            let alpha = alpha.ok_or_else(|| ConfigError::field("rule.alpha", "power-alpha needs alpha"))?;
            rule_from_power(alpha, truncation.unwrap_or(DEFAULT_TRUNCATION))
                .map_err(|error| ConfigError::Rule { field: "rule.alpha".into(), error })
        }
        other => Err(ConfigError::field(
            "rule.builtin",
            format!("unknown rule `{other}`; expected one of {}", BUILTIN_NAMES.join(", ")),
        )),
    }
}

/// Rule as TOML text in the rule-file schema.
pub fn to_rule_text(rule: &BranchingRule) -> String {
    let mut s = format!(
        "[intensity]\nc = \"{}\"\ngamma = \"{}\"\n",
        rule.intensity.c, rule.intensity.gamma
    );
    for t in &rule.transitions {
        let offspring: Vec<String> = t
            .offspring
            .iter()
            .map(|d| format!("{{ sign = {}, dderiv = {} }}", d.sign.as_i64(), d.dderiv))
            .collect();
        s.push_str(&format!("\n[[transitions]]\nweight = \"{}\"\noffspring = [{}]\n", t.weight, offspring.join(", ")));
    }
    s
}
