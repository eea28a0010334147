//! Positive magnitudes carried as natural logarithms.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{domain, Result};

/// Natural log of a nonnegative quantity. `-inf` encodes an exact zero;
/// NaN and `+inf` are rejected at construction.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogValue(f64);

impl LogValue {
    pub const ZERO: LogValue = LogValue(f64::NEG_INFINITY);
    pub const ONE: LogValue = LogValue(0.0);

    pub fn new(log_val: f64) -> Result<Self> {
        if log_val.is_nan() {
            return Err(domain("log value is NaN"));
        }
        if log_val == f64::INFINITY {
            return Err(domain("log value is +infinity"));
        }
        Ok(LogValue(log_val))
    }

    /// Only for values produced by arithmetic that cannot yield NaN/+inf.
    pub(crate) fn from_raw(log_val: f64) -> Self {
        debug_assert!(!log_val.is_nan() && log_val != f64::INFINITY, "bad log value {log_val}");
        LogValue(log_val)
    }

    pub fn from_linear(v: f64) -> Result<Self> {
        if v.is_nan() || v < 0.0 || v == f64::INFINITY {
            return Err(domain(format!("cannot take log of {v}")));
        }
        Ok(LogValue(v.ln()))
    }

    #[inline]
    pub fn ln(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn exp(self) -> f64 {
        self.0.exp()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    /// Product of the underlying magnitudes.
    pub fn mul(self, other: LogValue) -> LogValue {
        LogValue(self.0 + other.0)
    }

    /// Sum of the underlying magnitudes.
    pub fn add(self, other: LogValue) -> LogValue {
        LogValue(log_add_exp(self.0, other.0))
    }
}

impl fmt::Display for LogValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exp({})", self.0)
    }
}

// JSON has no infinities, so an exact zero is written as the string "-inf".
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Repr {
    Num(f64),
    Text(String),
}

impl Serialize for LogValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            Repr::Num(self.0).serialize(s)
        } else {
            Repr::Text("-inf".into()).serialize(s)
        }
    }
}

impl<'de> Deserialize<'de> for LogValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => LogValue::new(v).map_err(serde::de::Error::custom),
            Repr::Text(t) if t == "-inf" => Ok(LogValue::ZERO),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad log value {t:?}"))),
        }
    }
}

impl TryFrom<f64> for LogValue {
    type Error = crate::error::Error;
    fn try_from(v: f64) -> Result<Self> {
        LogValue::new(v)
    }
}

impl From<LogValue> for f64 {
    fn from(v: LogValue) -> f64 {
        v.0
    }
}

/// `ln(e^a + e^b)`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(1 - e^x)` for `x <= 0`; accurate on both sides of `-ln 2`.
#[inline]
pub fn log1m_exp(x: f64) -> f64 {
    debug_assert!(x <= 0.0);
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `ln(e^a - e^b)` for `a >= b`.
#[inline]
pub fn log_sub_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + log1m_exp(b - a)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}
