//! Exact currency and calendar-month primitives.
//!
//! Prices are stored as integer cents so file round-trips are bit-exact;
//! binary floating point never touches stored money.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MoneyError {
    #[error("invalid money literal {0:?}")]
    Invalid(String),
    #[error("money precision beyond cents in {0:?}")]
    Precision(String),
}

/// A currency amount in integer cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_cents(cents: i64) -> Money {
        Money(cents)
    }

    pub fn cents(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Nearest-cent conversion; errors when the value is more than a
    /// hair away from a whole number of cents (rejects 3+ decimals).
    pub fn from_f64(value: f64) -> Result<Money, MoneyError> {
        if !value.is_finite() {
            return Err(MoneyError::Invalid(value.to_string()));
        }
        let cents = value * 100.0;
        let rounded = cents.round();
        if (cents - rounded).abs() > 1e-6 {
            return Err(MoneyError::Precision(value.to_string()));
        }
        Ok(Money(rounded as i64))
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    /// Price after applying a discount fraction, rounded to the nearest cent.
    pub fn after_discount(self, discount: f64) -> Money {
        Money((self.0 as f64 * (1.0 - discount)).round() as i64)
    }

    /// Scale by an arbitrary factor, rounding to the nearest cent.
    pub fn scale(self, factor: f64) -> Money {
        Money((self.0 as f64 * factor).round() as i64)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{}{}.{:02}", sign, abs / 100, abs % 100)
    }
}

impl FromStr for Money {
    type Err = MoneyError;

    fn from_str(s: &str) -> Result<Money, MoneyError> {
        let t = s.trim();
        let (sign, rest) = match t.strip_prefix('-') {
            Some(r) => (-1i64, r),
            None => (1i64, t),
        };
        if rest.is_empty() {
            return Err(MoneyError::Invalid(s.to_string()));
        }
        let (whole, frac) = match rest.split_once('.') {
            Some((w, f)) => (w, f),
            None => (rest, ""),
        };
        if frac.len() > 2 {
            return Err(MoneyError::Precision(s.to_string()));
        }
        if !whole.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(MoneyError::Invalid(s.to_string()));
        }
        let whole: i64 = if whole.is_empty() {
            0
        } else {
            whole.parse().map_err(|_| MoneyError::Invalid(s.to_string()))?
        };
        let frac_cents: i64 = match frac.len() {
            0 => 0,
            1 => frac.parse::<i64>().map_err(|_| MoneyError::Invalid(s.to_string()))? * 10,
            _ => frac.parse().map_err(|_| MoneyError::Invalid(s.to_string()))?,
        };
        Ok(Money(sign * (whole * 100 + frac_cents)))
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Money, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(v) => Money::from_f64(v).map_err(serde::de::Error::custom),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// A calendar month, stored as a flat index (`year * 12 + month0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month(u32);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid month literal {0:?}, expected YYYY-MM")]
pub struct MonthParseError(String);

impl Month {
    pub fn new(year: u32, month: u32) -> Month {
        assert!((1..=12).contains(&month), "month must be 1..=12");
        Month(year * 12 + (month - 1))
    }

    pub fn year(self) -> u32 {
        self.0 / 12
    }

    pub fn month(self) -> u32 {
        self.0 % 12 + 1
    }

    pub fn index(self) -> u32 {
        self.0
    }

    pub fn from_index(index: u32) -> Month {
        Month(index)
    }

    pub fn next(self) -> Month {
        Month(self.0 + 1)
    }

    pub fn from_datetime(dt: &chrono::NaiveDateTime) -> Month {
        use chrono::Datelike;
        Month::new(dt.year() as u32, dt.month())
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year(), self.month())
    }
}

impl FromStr for Month {
    type Err = MonthParseError;

    fn from_str(s: &str) -> Result<Month, MonthParseError> {
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| MonthParseError(s.to_string()))?;
        let year: u32 = y.parse().map_err(|_| MonthParseError(s.to_string()))?;
        let month: u32 = m.parse().map_err(|_| MonthParseError(s.to_string()))?;
        if !(1..=12).contains(&month) {
            return Err(MonthParseError(s.to_string()));
        }
        Ok(Month::new(year, month))
    }
}

impl Serialize for Month {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Month {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Month, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
