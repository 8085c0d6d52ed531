//! Natural-log domain arithmetic.
//!
//! Everything in the lattice is carried as log-weights; `-inf` is the zero
//! weight. Sums are max-shifted so long products never overflow.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A weight stored as its natural logarithm.
#[derive(Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogWeight(f64);

impl LogWeight {
    pub const ZERO: LogWeight = LogWeight(f64::NEG_INFINITY);
    pub const ONE: LogWeight = LogWeight(0.0);

    /// Panics on NaN: a NaN log-weight means an upstream bug.
    pub fn new(value: f64) -> Self {
        assert!(!value.is_nan(), "LogWeight must not be NaN");
        LogWeight(value)
    }

    /// Errors on NaN or `+inf`, which arise from overflowing weights.
    pub fn checked(value: f64) -> crate::error::Result<Self> {
        if value.is_nan() || value == f64::INFINITY {
            return Err(crate::error::Error::NonFinite(format!("log weight {value}")));
        }
        Ok(LogWeight(value))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    pub fn plus(self, other: LogWeight) -> LogWeight {
        LogWeight(log_add(self.0, other.0))
    }

    pub fn times(self, other: LogWeight) -> LogWeight {
        LogWeight(self.0 + other.0)
    }
}

impl fmt::Debug for LogWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LogWeight({})", self.0)
    }
}

impl fmt::Display for LogWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// `ln(e^a + e^b)`. Exact when either side is `-inf`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Max-shifted log-sum-exp over a slice; `-inf` for an all-zero slice.
///
/// The caller guarantees a non-empty slice; see [`log_sum_exp`] for the
/// checked variant.
pub fn lse(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if values.len() == 1 {
        return values[0];
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

pub fn log_sum_exp(values: &[LogWeight]) -> Result<LogWeight> {
    if values.is_empty() {
        return Err(Error::EmptyInput("log_sum_exp requires at least one value"));
    }
    let raw: Vec<f64> = values.iter().map(|v| v.0).collect();
    Ok(LogWeight(lse(&raw)))
}

/// Softmax of a log-weight row. All-zero rows give all zeros.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let z = lse(values);
    if z == f64::NEG_INFINITY {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| (v - z).exp()).collect()
}

/// A signed real stored as `(sign, ln|x|)`; used where mass-weighted
/// quantities could otherwise underflow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignedLog {
    pub negative: bool,
    pub log_abs: f64,
}

impl SignedLog {
    pub const ZERO: SignedLog = SignedLog {
        negative: false,
        log_abs: f64::NEG_INFINITY,
    };

    pub fn from_f64(x: f64) -> Self {
        SignedLog {
            negative: x < 0.0,
            log_abs: x.abs().ln(),
        }
    }

    pub fn to_f64(self) -> f64 {
        let m = self.log_abs.exp();
        if self.negative {
            -m
        } else {
            m
        }
    }

    pub fn is_zero(self) -> bool {
        self.log_abs == f64::NEG_INFINITY
    }

    pub fn add(self, other: SignedLog) -> SignedLog {
        if self.is_zero() {
            return other;
        }
        if other.is_zero() {
            return self;
        }
        if self.negative == other.negative {
            return SignedLog {
                negative: self.negative,
                log_abs: log_add(self.log_abs, other.log_abs),
            };
        }
        let (big, small) = if self.log_abs >= other.log_abs {
            (self, other)
        } else {
            (other, self)
        };
        let diff = small.log_abs - big.log_abs;
        if diff == 0.0 {
            return SignedLog::ZERO;
        }
        SignedLog {
            negative: big.negative,
            log_abs: big.log_abs + (-diff.exp()).ln_1p(),
        }
    }

    /// Multiply by a positive weight given in log space.
    pub fn scale(self, log_weight: f64) -> SignedLog {
        if self.is_zero() || log_weight == f64::NEG_INFINITY {
            return SignedLog::ZERO;
        }
        SignedLog {
            negative: self.negative,
            log_abs: self.log_abs + log_weight,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_element_is_exact() {
        let x = LogWeight::new(-3.25);
        assert_eq!(log_sum_exp(&[x]).unwrap(), x);
    }

    #[test]
    fn zero_weight_is_absorbed() {
        let r = log_sum_exp(&[LogWeight::ZERO, LogWeight::new(1.5)]).unwrap();
        assert_eq!(r.value(), 1.5);
        assert_eq!(log_add(f64::NEG_INFINITY, 1.5), 1.5);
        assert_eq!(log_add(1.5, f64::NEG_INFINITY), 1.5);
    }

    #[test]
    fn two_units_sum_to_ln2() {
        let r = log_sum_exp(&[LogWeight::ONE, LogWeight::ONE]).unwrap();
        assert!((r.value() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn empty_is_rejected() {
        assert!(matches!(log_sum_exp(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn large_values_do_not_overflow() {
        let r = lse(&[1234.0, 1232.0]);
        assert!((r - (1232.0 + (2f64.exp() + 1.0).ln())).abs() < 1e-9);
        assert_eq!(lse(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn signed_log_arithmetic() {
        let a = SignedLog::from_f64(3.0);
        let b = SignedLog::from_f64(-5.0);
        assert!((a.add(b).to_f64() + 2.0).abs() < 1e-12);
        assert!(a.add(SignedLog::from_f64(-3.0)).is_zero());
        assert!((a.scale(2f64.ln()).to_f64() - 6.0).abs() < 1e-12);
        assert_eq!(SignedLog::ZERO.add(b), b);
    }
}
