//! Column types, values and the fixed-point decimal used by the engine.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

/// Largest supported decimal precision; keeps every value inside an `i128`.
pub const MAX_DECIMAL_PRECISION: u8 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnType {
    Int,
    Text,
    Decimal { precision: u8, scale: u8 },
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnType::Int => f.write_str("INT"),
            ColumnType::Text => f.write_str("TEXT"),
            ColumnType::Decimal { precision, scale } => write!(f, "DECIMAL({precision},{scale})"),
        }
    }
}

/// How a decimal with more fractional digits than its column allows is brought
/// down to the column scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoundingMode {
    #[default]
    HalfEven,
    Truncate,
}

/// Ordering used by range comparisons on TEXT values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Collation {
    #[default]
    Binary,
    CaseInsensitive,
}

impl Collation {
    pub fn compare(self, a: &str, b: &str) -> Ordering {
        match self {
            Collation::Binary => a.as_bytes().cmp(b.as_bytes()),
            Collation::CaseInsensitive => a
                .chars()
                .flat_map(char::to_lowercase)
                .cmp(b.chars().flat_map(char::to_lowercase))
                .then_with(|| a.as_bytes().cmp(b.as_bytes())),
        }
    }
}

/// Fixed-point decimal: `units / 10^scale`.
#[derive(Debug, Clone, Copy)]
pub struct Decimal {
    units: i128,
    scale: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecimalError {
    #[error("malformed decimal literal `{0}`")]
    Malformed(String),
    #[error("decimal out of range")]
    Overflow,
}

fn pow10(exp: u32) -> Option<i128> {
    10i128.checked_pow(exp)
}

impl Decimal {
    pub fn new(units: i128, scale: u8) -> Self {
        Decimal { units, scale }
    }

    pub fn units(&self) -> i128 {
        self.units
    }

    pub fn scale(&self) -> u8 {
        self.scale
    }

    pub fn from_int(v: i64) -> Self {
        Decimal { units: v as i128, scale: 0 }
    }

    /// Parses `-?digits(.digits)?` keeping every written fractional digit.
    pub fn parse(text: &str) -> Result<Self, DecimalError> {
        let malformed = || DecimalError::Malformed(text.to_string());
        let (negative, body) = match text.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, text.strip_prefix('+').unwrap_or(text)),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(malformed());
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(malformed());
        }
        if frac_part.len() > MAX_DECIMAL_PRECISION as usize {
            return Err(DecimalError::Overflow);
        }
        let mut units: i128 = 0;
        for b in int_part.bytes().chain(frac_part.bytes()) {
            units = units
                .checked_mul(10)
                .and_then(|u| u.checked_add((b - b'0') as i128))
                .ok_or(DecimalError::Overflow)?;
        }
        if negative {
            units = -units;
        }
        Ok(Decimal { units, scale: frac_part.len() as u8 })
    }

    /// Exact re-expression at a larger or equal scale.
    fn widen(&self, scale: u8) -> Option<i128> {
        debug_assert!(scale >= self.scale);
        pow10((scale - self.scale) as u32).and_then(|p| self.units.checked_mul(p))
    }

    /// Brings the value to exactly `scale` fractional digits.
    pub fn rescale(&self, scale: u8, mode: RoundingMode) -> Result<Decimal, DecimalError> {
        if scale >= self.scale {
            let units = self.widen(scale).ok_or(DecimalError::Overflow)?;
            return Ok(Decimal { units, scale });
        }
        let divisor = pow10((self.scale - scale) as u32).ok_or(DecimalError::Overflow)?;
        let quotient = self.units / divisor;
        let remainder = self.units % divisor;
        let units = match mode {
            RoundingMode::Truncate => quotient,
            RoundingMode::HalfEven => {
                let twice = remainder.abs() * 2;
                let away = match twice.cmp(&divisor) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => quotient % 2 != 0,
                };
                if away {
                    quotient + self.units.signum()
                } else {
                    quotient
                }
            }
        };
        Ok(Decimal { units, scale })
    }

    /// True when the value can be stored at `scale` without rounding.
    pub fn fits_scale(&self, scale: u8) -> bool {
        if scale >= self.scale {
            return true;
        }
        match pow10((self.scale - scale) as u32) {
            Some(p) => self.units % p == 0,
            None => self.units == 0,
        }
    }

    pub fn checked_add(&self, other: &Decimal) -> Option<Decimal> {
        let scale = self.scale.max(other.scale);
        let a = self.widen(scale)?;
        let b = other.widen(scale)?;
        Some(Decimal { units: a.checked_add(b)?, scale })
    }

    pub fn checked_sub(&self, other: &Decimal) -> Option<Decimal> {
        let scale = self.scale.max(other.scale);
        let a = self.widen(scale)?;
        let b = other.widen(scale)?;
        Some(Decimal { units: a.checked_sub(b)?, scale })
    }

    /// Number of integer digits plus `scale`, ignoring sign.
    pub fn digits(&self) -> u32 {
        let mut n = self.units.unsigned_abs();
        let mut d = 0;
        while n > 0 {
            n /= 10;
            d += 1;
        }
        d.max(self.scale as u32)
    }

    /// Canonical text at the value's own scale: no trailing-zero stripping.
    pub fn canonical(&self) -> String {
        let negative = self.units < 0;
        let digits = self.units.unsigned_abs().to_string();
        let scale = self.scale as usize;
        let mut out = String::with_capacity(digits.len() + 3);
        if negative {
            out.push('-');
        }
        if scale == 0 {
            out.push_str(&digits);
            return out;
        }
        if digits.len() <= scale {
            out.push_str("0.");
            out.extend(std::iter::repeat_n('0', scale - digits.len()));
            out.push_str(&digits);
        } else {
            let (i, f) = digits.split_at(digits.len() - scale);
            out.push_str(i);
            out.push('.');
            out.push_str(f);
        }
        out
    }

    /// Scale-independent form: trailing fractional zeros removed.
    pub fn normalized(&self) -> Decimal {
        let mut d = *self;
        while d.scale > 0 && d.units % 10 == 0 {
            d.units /= 10;
            d.scale -= 1;
        }
        d
    }
}

impl PartialEq for Decimal {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Decimal {}

impl PartialOrd for Decimal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Decimal {
    fn cmp(&self, other: &Self) -> Ordering {
        let scale = self.scale.max(other.scale);
        match (self.widen(scale), other.widen(scale)) {
            (Some(a), Some(b)) => a.cmp(&b),
            // Only reachable for values near the i128 limit; fall back to normalized form.
            _ => {
                let (a, b) = (self.normalized(), other.normalized());
                let scale = a.scale.max(b.scale);
                match (a.widen(scale), b.widen(scale)) {
                    (Some(x), Some(y)) => x.cmp(&y),
                    _ => a.units.signum().cmp(&b.units.signum()),
                }
            }
        }
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

/// A stored or literal value. NULL is not part of the supported subset.
#[derive(Debug, Clone)]
pub enum Value {
    Int(i64),
    Text(String),
    Decimal(Decimal),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "INT",
            Value::Text(_) => "TEXT",
            Value::Decimal(_) => "DECIMAL",
        }
    }

    pub fn is_numeric(&self) -> bool {
        !matches!(self, Value::Text(_))
    }

    pub fn as_decimal(&self) -> Option<Decimal> {
        match self {
            Value::Int(v) => Some(Decimal::from_int(*v)),
            Value::Decimal(d) => Some(*d),
            Value::Text(_) => None,
        }
    }

    /// Canonical byte form used for hashing and dumps: INT as decimal digits,
    /// TEXT as its UTF-8 bytes, DECIMAL at its stored scale.
    pub fn canonical(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            Value::Text(s) => s.clone(),
            Value::Decimal(d) => d.canonical(),
        }
    }

    /// Total order used for keys and binary comparisons. Numbers compare by
    /// value across INT/DECIMAL; TEXT compares bytewise and sorts after numbers.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Text(a), Value::Text(b)) => a.as_bytes().cmp(b.as_bytes()),
            (Value::Text(_), _) => Ordering::Greater,
            (_, Value::Text(_)) => Ordering::Less,
            (a, b) => a.as_decimal().unwrap().cmp(&b.as_decimal().unwrap()),
        }
    }

    /// Comparison honoring the TEXT collation for range predicates.
    pub fn collated_cmp(&self, other: &Value, collation: Collation) -> Ordering {
        match (self, other) {
            (Value::Text(a), Value::Text(b)) => collation.compare(a, b),
            _ => self.total_cmp(other),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.total_cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.total_cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        // Equal numbers must hash equally regardless of INT/DECIMAL representation.
        match self {
            Value::Text(s) => {
                1u8.hash(state);
                s.hash(state);
            }
            numeric => {
                let d = numeric.as_decimal().unwrap().normalized();
                0u8.hash(state);
                d.units.hash(state);
                d.scale.hash(state);
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
            other => f.write_str(&other.canonical()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> Decimal {
        Decimal::parse(s).unwrap()
    }

    #[test]
    fn parse_and_canonical() {
        assert_eq!(d("7.9").canonical(), "7.9");
        assert_eq!(d("-0.05").canonical(), "-0.05");
        assert_eq!(d("12").canonical(), "12");
        assert_eq!(d(".5").canonical(), "0.5");
        assert!(Decimal::parse("1.2.3").is_err());
        assert!(Decimal::parse("").is_err());
        assert!(Decimal::parse("abc").is_err());
    }

    #[test]
    fn rescale_keeps_trailing_zeros() {
        assert_eq!(d("7.9").rescale(2, RoundingMode::HalfEven).unwrap().canonical(), "7.90");
    }

    #[test]
    fn half_even_versus_truncate() {
        let cases = [
            ("1.235", "1.24", "1.23"),
            ("1.225", "1.22", "1.22"),
            ("1.226", "1.23", "1.22"),
            ("1.224", "1.22", "1.22"),
            ("-1.235", "-1.24", "-1.23"),
            ("-1.226", "-1.23", "-1.22"),
        ];
        for (input, even, trunc) in cases {
            assert_eq!(d(input).rescale(2, RoundingMode::HalfEven).unwrap().canonical(), even, "{input}");
            assert_eq!(d(input).rescale(2, RoundingMode::Truncate).unwrap().canonical(), trunc, "{input}");
        }
    }

    #[test]
    fn numeric_equality_across_representations() {
        assert_eq!(Value::Int(5), Value::Decimal(d("5.00")));
        assert!(Value::Int(5) < Value::Decimal(d("5.01")));
        assert!(Value::Int(1) < Value::Text("0".into()));
    }

    #[test]
    fn case_insensitive_collation() {
        assert_eq!(Collation::CaseInsensitive.compare("abc", "ABD"), Ordering::Less);
        assert_eq!(Collation::Binary.compare("abc", "ABD"), Ordering::Greater);
    }

    #[test]
    fn arithmetic_aligns_scales() {
        assert_eq!(d("1.5").checked_add(&d("0.25")).unwrap().canonical(), "1.75");
        assert_eq!(d("1").checked_sub(&d("0.001")).unwrap().canonical(), "0.999");
        assert!(d("2").fits_scale(0));
        assert!(!d("2.5").fits_scale(0));
        assert!(d("2.50").fits_scale(1));
    }
}
