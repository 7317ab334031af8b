//! Extended nonnegative reals `[0, +inf]`.
//!
//! Integration of nonnegative functions against unnormalized measures
//! produces values in `[0, +inf]`, with the measure-theoretic product
//! convention `0 * inf = 0`. That convention differs from IEEE 754 floats
//! (where `0.0 * f64::INFINITY` is NaN), so the type wraps `f64` and owns
//! its arithmetic. NaN is unrepresentable: constructors reject it and no
//! operation produces it.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Mul};

use crate::error::MeasureError;

/// A value in `[0, +inf]`. Ordered, with `inf` as the maximum.
#[derive(Clone, Copy, PartialEq)]
pub struct ExtNonNeg(f64);

impl ExtNonNeg {
    pub const ZERO: ExtNonNeg = ExtNonNeg(0.0);
    pub const ONE: ExtNonNeg = ExtNonNeg(1.0);
    pub const INFINITY: ExtNonNeg = ExtNonNeg(f64::INFINITY);

    /// Wraps a float, rejecting NaN and negatives. `+inf` is accepted.
    pub fn new(value: f64) -> Result<ExtNonNeg, MeasureError> {
        if value.is_nan() || value < 0.0 {
            Err(MeasureError::InvalidExtendedValue { value })
        } else {
            Ok(ExtNonNeg(value))
        }
    }

    /// Wraps a float known to be nonnegative. Debug-checked.
    pub(crate) fn from_checked(value: f64) -> ExtNonNeg {
        debug_assert!(!value.is_nan() && value >= 0.0, "bad ExtNonNeg {value}");
        ExtNonNeg(value)
    }

    /// The underlying float; `f64::INFINITY` for the point at infinity.
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    pub fn is_infinite(self) -> bool {
        self.0 == f64::INFINITY
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }

    /// Returns the value as a finite float, or an error if infinite.
    pub fn finite(self, context: &str) -> Result<f64, MeasureError> {
        if self.is_finite() {
            Ok(self.0)
        } else {
            Err(MeasureError::InfiniteMass {
                context: context.to_string(),
            })
        }
    }

    /// Quotient with the conventions `0/0 = 0` and `a/0 = inf` for `a > 0`,
    /// matching how densities of ratios of conditional expectations are
    /// formed. `inf/inf` is rejected.
    pub fn div(self, rhs: ExtNonNeg) -> Result<ExtNonNeg, MeasureError> {
        if self.is_infinite() && rhs.is_infinite() {
            return Err(MeasureError::invalid("inf/inf is undefined"));
        }
        if self.0 == 0.0 {
            return Ok(ExtNonNeg::ZERO);
        }
        if rhs.0 == 0.0 {
            return Ok(ExtNonNeg::INFINITY);
        }
        Ok(ExtNonNeg(self.0 / rhs.0))
    }
}

impl Add for ExtNonNeg {
    type Output = ExtNonNeg;

    fn add(self, rhs: ExtNonNeg) -> ExtNonNeg {
        // a + inf = inf falls out of IEEE addition; no NaN can arise from
        // adding two nonnegative non-NaN floats.
        ExtNonNeg(self.0 + rhs.0)
    }
}

impl Mul for ExtNonNeg {
    type Output = ExtNonNeg;

    fn mul(self, rhs: ExtNonNeg) -> ExtNonNeg {
        // 0 * inf = 0, the measure-theoretic convention.
        if self.0 == 0.0 || rhs.0 == 0.0 {
            ExtNonNeg(0.0)
        } else {
            ExtNonNeg(self.0 * rhs.0)
        }
    }
}

impl Sum for ExtNonNeg {
    fn sum<I: Iterator<Item = ExtNonNeg>>(iter: I) -> ExtNonNeg {
        iter.fold(ExtNonNeg::ZERO, |acc, x| acc + x)
    }
}

impl Eq for ExtNonNeg {}

impl PartialOrd for ExtNonNeg {
    fn partial_cmp(&self, other: &ExtNonNeg) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExtNonNeg {
    fn cmp(&self, other: &ExtNonNeg) -> Ordering {
        // Total because NaN is unrepresentable.
        self.0.partial_cmp(&other.0).expect("ExtNonNeg is never NaN")
    }
}

impl fmt::Debug for ExtNonNeg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExtNonNeg({})", self)
    }
}

impl fmt::Display for ExtNonNeg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}
