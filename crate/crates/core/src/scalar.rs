//! Arithmetic modes: exact rationals for equilibrium checks, `f64` for benchmarks.
//!
//! The stopping rule compares continuation values with a strict `>`. That
//! comparison is only decidable exactly with rationals; the float mode uses a
//! fixed margin instead and resolves ties towards stopping.

use std::fmt;
use std::hash::Hash;
use std::ops::{Add, Div, Mul, Sub};

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};

use crate::error::CoreError;

/// Margin used by the float mode for strict comparisons and equality checks.
pub const FLOAT_MARGIN: f64 = 1e-9;

/// Number type the simulator is generic over.
///
/// `Key` is a hashable canonical form used for memoization; two values with
/// equal keys must behave identically in every arithmetic operation.
pub trait Scalar:
    Clone
    + PartialEq
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
{
    type Key: Clone + Eq + Ord + Hash + fmt::Debug + Send + Sync + 'static;

    /// True when arithmetic is exact and comparisons carry no margin.
    const EXACT: bool;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_int(v: u64) -> Self;
    fn from_ratio(num: u64, den: u64) -> Self;
    /// Parses `"0.25"`, `"3/4"`, `"1"`, with an optional leading sign.
    fn parse(text: &str) -> Result<Self, CoreError>;
    fn to_f64(&self) -> f64;
    fn key(&self) -> Self::Key;
    /// Strict `self > other`, with the mode's margin. Float ties resolve false.
    fn strictly_above(&self, other: &Self) -> bool;
    /// Equality with the mode's tolerance.
    fn close_to(&self, other: &Self) -> bool;

    fn is_zero_value(&self) -> bool {
        self.close_to(&Self::zero())
    }
}

impl Scalar for f64 {
    type Key = u64;
    const EXACT: bool = false;

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_int(v: u64) -> Self {
        v as f64
    }
    fn from_ratio(num: u64, den: u64) -> Self {
        num as f64 / den as f64
    }
    fn parse(text: &str) -> Result<Self, CoreError> {
        if let Some((n, d)) = text.split_once('/') {
            let n: f64 = n
                .trim()
                .parse()
                .map_err(|_| CoreError::BadNumber(text.to_string()))?;
            let d: f64 = d
                .trim()
                .parse()
                .map_err(|_| CoreError::BadNumber(text.to_string()))?;
            if d == 0.0 {
                return Err(CoreError::BadNumber(text.to_string()));
            }
            return Ok(n / d);
        }
        text.trim()
            .parse()
            .map_err(|_| CoreError::BadNumber(text.to_string()))
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn key(&self) -> u64 {
        // Normalize -0.0 so it memoizes like +0.0.
        let v = if *self == 0.0 { 0.0 } else { *self };
        v.to_bits()
    }
    fn strictly_above(&self, other: &Self) -> bool {
        *self > other + FLOAT_MARGIN
    }
    fn close_to(&self, other: &Self) -> bool {
        (self - other).abs() <= FLOAT_MARGIN
    }
}

impl Scalar for BigRational {
    type Key = BigRational;
    const EXACT: bool = true;

    fn zero() -> Self {
        <BigRational as Zero>::zero()
    }
    fn one() -> Self {
        <BigRational as One>::one()
    }
    fn from_int(v: u64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }
    fn from_ratio(num: u64, den: u64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
    fn parse(text: &str) -> Result<Self, CoreError> {
        let text = text.trim();
        let (negative, body) = match text.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, text.strip_prefix('+').unwrap_or(text)),
        };
        let magnitude = if let Some((n, d)) = body.split_once('/') {
            let n: BigInt = n
                .trim()
                .parse()
                .map_err(|_| CoreError::BadNumber(text.to_string()))?;
            let d: BigInt = d
                .trim()
                .parse()
                .map_err(|_| CoreError::BadNumber(text.to_string()))?;
            if d.is_zero() {
                return Err(CoreError::BadNumber(text.to_string()));
            }
            BigRational::new(n, d)
        } else if let Some((int_part, frac_part)) = body.split_once('.') {
            let int_part = if int_part.is_empty() { "0" } else { int_part };
            let frac_digits = frac_part.len() as u32;
            if frac_part.chars().any(|c| !c.is_ascii_digit())
                || int_part.chars().any(|c| !c.is_ascii_digit())
            {
                return Err(CoreError::BadNumber(text.to_string()));
            }
            let whole: BigInt = int_part
                .parse()
                .map_err(|_| CoreError::BadNumber(text.to_string()))?;
            let frac: BigInt = if frac_part.is_empty() {
                BigInt::from(0)
            } else {
                frac_part
                    .parse()
                    .map_err(|_| CoreError::BadNumber(text.to_string()))?
            };
            let den = BigInt::from(10u32).pow(frac_digits);
            BigRational::new(whole * &den + frac, den)
        } else {
            let n: BigInt = body
                .parse()
                .map_err(|_| CoreError::BadNumber(text.to_string()))?;
            BigRational::from_integer(n)
        };
        Ok(if negative { -magnitude } else { magnitude })
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn key(&self) -> BigRational {
        self.clone()
    }
    fn strictly_above(&self, other: &Self) -> bool {
        self > other
    }
    fn close_to(&self, other: &Self) -> bool {
        self == other
    }
}

/// Sums a slice of scalars.
pub fn sum<N: Scalar>(values: &[N]) -> N {
    values
        .iter()
        .fold(N::zero(), |acc, v| acc + v.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_decimal_rational() {
        let v = BigRational::parse("0.95").unwrap();
        assert_eq!(v, BigRational::from_ratio(95, 100));
        let v = BigRational::parse("3/4").unwrap();
        assert_eq!(v, BigRational::from_ratio(3, 4));
        let v = BigRational::parse("2").unwrap();
        assert_eq!(v, BigRational::from_int(2));
        assert!(BigRational::parse("abc").is_err());
        assert!(BigRational::parse("1/0").is_err());
    }

    #[test]
    fn parse_decimal_float() {
        assert_eq!(f64::parse("0.25").unwrap(), 0.25);
        assert_eq!(f64::parse("1/2").unwrap(), 0.5);
        assert!(f64::parse("nope").is_err());
    }

    #[test]
    fn strict_comparison_margins() {
        // Float ties (within margin) resolve to "not above".
        assert!(!1.0f64.strictly_above(&1.0));
        assert!(!(1.0 + 1e-10).strictly_above(&1.0));
        assert!((1.0 + 1e-6).strictly_above(&1.0));
        // Rational strictness is exact.
        let a = BigRational::from_ratio(1, 3);
        let b = BigRational::from_ratio(333333, 1000000);
        assert!(a.strictly_above(&b));
    }

    #[test]
    fn negative_zero_key() {
        assert_eq!((-0.0f64).key(), 0.0f64.key());
    }
}
