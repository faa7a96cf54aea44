use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::HealthReport;

pub type Rational = Ratio<i128>;

/// Severity of a state: a non-negative rational, or infinity for the crash
/// state. Infinity compares greater than every finite value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Severity {
    Finite(Rational),
    Infinite,
}

impl Severity {
    pub const ZERO: Severity = Severity::Finite(Ratio::new_raw(0, 1));

    pub fn from_integer(v: i128) -> Self {
        Severity::Finite(Ratio::from_integer(v))
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Severity::Infinite)
    }

    /// Weighted sum of the three report sets, or infinity when crashed.
    pub fn of(report: &HealthReport, weights: &SeverityWeights, crashed: bool) -> Self {
        if crashed {
            return Severity::Infinite;
        }
        let count = |n: usize| Ratio::from_integer(n as i128);
        Severity::Finite(
            weights.alerts * count(report.alerts.len())
                + weights.sla_violations * count(report.sla_violations.len())
                + weights.capacity_losses * count(report.capacity_losses.len()),
        )
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Severity::Infinite => f.write_str("inf"),
            Severity::Finite(r) if r.is_integer() => write!(f, "{}", r.numer()),
            Severity::Finite(r) => write!(f, "{}/{}", r.numer(), r.denom()),
        }
    }
}

impl FromStr for Severity {
    type Err = WeightError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "∞" => Ok(Severity::Infinite),
            other => parse_ratio(other).map(Severity::Finite),
        }
    }
}

// Integral severities serialize as JSON numbers; fractions and infinity as
// strings ("7/2", "inf").
impl Serialize for Severity {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Severity::Finite(r) if r.is_integer() => {
                let v = *r.numer();
                match i64::try_from(v) {
                    Ok(v) => serializer.serialize_i64(v),
                    Err(_) => serializer.collect_str(self),
                }
            }
            _ => serializer.collect_str(self),
        }
    }
}

impl<'de> Deserialize<'de> for Severity {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(v) => Ok(Severity::from_integer(v.into())),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightError {
    #[error("invalid number {0:?}")]
    Invalid(String),
    #[error("weight {0} must be strictly positive")]
    NotPositive(String),
    #[error("expected three comma-separated weights, got {0}")]
    Arity(usize),
}

/// Parses `3`, `7/2` or `0.25` into an exact rational.
pub fn parse_ratio(text: &str) -> Result<Rational, WeightError> {
    let t = text.trim();
    let bad = || WeightError::Invalid(t.to_owned());
    if let Some((n, d)) = t.split_once('/') {
        let n: i128 = n.trim().parse().map_err(|_| bad())?;
        let d: i128 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(n, d));
    }
    if let Some((int, frac)) = t.split_once('.') {
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) || frac.len() > 18 {
            return Err(bad());
        }
        let negative = int.starts_with('-');
        let int: i128 = if int.is_empty() || int == "-" { 0 } else { int.parse().map_err(|_| bad())? };
        let scale = 10i128.pow(frac.len() as u32);
        let frac: i128 = frac.parse().map_err(|_| bad())?;
        let magnitude = int.abs() * scale + frac;
        return Ok(Ratio::new(if negative { -magnitude } else { magnitude }, scale));
    }
    t.parse::<i128>().map(Ratio::from_integer).map_err(|_| bad())
}

/// Positive weights for alerts, SLA violations and capacity losses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeverityWeights {
    pub alerts: Rational,
    pub sla_violations: Rational,
    pub capacity_losses: Rational,
}

impl SeverityWeights {
    pub fn new(alerts: Rational, sla_violations: Rational, capacity_losses: Rational) -> Result<Self, WeightError> {
        for w in [alerts, sla_violations, capacity_losses] {
            if w <= Ratio::from_integer(0) {
                return Err(WeightError::NotPositive(Severity::Finite(w).to_string()));
            }
        }
        Ok(SeverityWeights { alerts, sla_violations, capacity_losses })
    }
}

impl Default for SeverityWeights {
    fn default() -> Self {
        let one = Ratio::from_integer(1);
        SeverityWeights { alerts: one, sla_violations: one, capacity_losses: one }
    }
}

impl FromStr for SeverityWeights {
    type Err = WeightError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 3 {
            return Err(WeightError::Arity(parts.len()));
        }
        SeverityWeights::new(parse_ratio(parts[0])?, parse_ratio(parts[1])?, parse_ratio(parts[2])?)
    }
}

impl fmt::Display for SeverityWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{}",
            Severity::Finite(self.alerts),
            Severity::Finite(self.sla_violations),
            Severity::Finite(self.capacity_losses)
        )
    }
}

impl Serialize for SeverityWeights {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SeverityWeights {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn report(a: usize, v: usize, l: usize) -> HealthReport {
        let ids = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}/{i}")).collect::<BTreeSet<_>>();
        HealthReport { alerts: ids("pod", a), sla_violations: ids("req", v), capacity_losses: ids("node", l) }
    }

    #[test]
    fn crashed_is_infinite() {
        assert_eq!(Severity::of(&report(0, 0, 0), &SeverityWeights::default(), true), Severity::Infinite);
    }

    #[test]
    fn empty_report_is_zero_for_any_weights() {
        let w: SeverityWeights = "7/3,0.5,12".parse().unwrap();
        assert_eq!(Severity::of(&report(0, 0, 0), &w, false), Severity::ZERO);
    }

    #[test]
    fn unit_weights_sum_counts() {
        assert_eq!(Severity::of(&report(2, 1, 1), &SeverityWeights::default(), false), Severity::from_integer(4));
    }

    #[test]
    fn infinity_dominates() {
        assert!(Severity::Infinite > Severity::from_integer(i64::MAX.into()));
    }

    #[test]
    fn weights_must_be_positive() {
        assert!(matches!("1,0,1".parse::<SeverityWeights>(), Err(WeightError::NotPositive(_))));
        assert!(matches!("1,-2,1".parse::<SeverityWeights>(), Err(WeightError::NotPositive(_))));
        assert!(matches!("1,1".parse::<SeverityWeights>(), Err(WeightError::Arity(2))));
    }

    #[test]
    fn decimal_and_fraction_parse_exactly() {
        assert_eq!(parse_ratio("0.25").unwrap(), Ratio::new(1, 4));
        assert_eq!(parse_ratio("7/2").unwrap(), Ratio::new(7, 2));
        assert_eq!(parse_ratio("1.5").unwrap(), Ratio::new(3, 2));
        assert!(parse_ratio("x").is_err());
    }

    #[test]
    fn json_form() {
        let v =
            serde_json::to_string(&[Severity::from_integer(12), Severity::Finite(Ratio::new(7, 2)), Severity::Infinite]).unwrap();
        assert_eq!(v, r#"[12,"7/2","inf"]"#);
        let back: Vec<Severity> = serde_json::from_str(&v).unwrap();
        assert_eq!(back[1], Severity::Finite(Ratio::new(7, 2)));
    }
}
