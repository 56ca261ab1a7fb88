//! Exact scalar abstraction used for money, valuations and prices.
//!
//! Every algorithm in this crate compares gains for exact equality (ties in
//! demand, indifference of sellers, budget balance), so the scalar has to be
//! an exact ordered field. Any `num_rational::Ratio<I>` over a signed integer
//! type qualifies; [`crate::Rational`] (arbitrary precision) is the default.

use std::fmt::{Debug, Display};
use std::hash::Hash;
use std::str::FromStr;

use num_bigint::{BigInt, ToBigInt};
use num_integer::Integer;
use num_rational::{BigRational, Ratio};
use num_traits::{Num, NumRef, Signed, ToPrimitive};

/// An exact, totally ordered number.
pub trait Scalar:
    Num
    + NumRef
    + Signed
    + Clone
    + Ord
    + Hash
    + Debug
    + Display
    + FromStr
    + ToPrimitive
    + Send
    + Sync
    + 'static
{
    /// The denominator in lowest terms, as an integer-valued scalar.
    fn denominator_value(&self) -> Self;

    /// Least common multiple of two integer-valued scalars.
    fn lcm_integer(&self, other: &Self) -> Self;

    /// Lossless conversion to an arbitrary-precision rational.
    fn to_rational(&self) -> BigRational;

    /// Conversion from an arbitrary-precision rational; `None` on overflow.
    fn from_rational(value: &BigRational) -> Option<Self>;

    fn from_int(value: i64) -> Self {
        Self::from_rational(&BigRational::from_integer(value.into())).expect("every exact scalar represents i64")
    }

    fn from_fraction(numer: i64, denom: i64) -> Self {
        Self::from_int(numer) / Self::from_int(denom)
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<I> Scalar for Ratio<I>
where
    I: Integer
        + Signed
        + Clone
        + Hash
        + Debug
        + Display
        + FromStr
        + ToPrimitive
        + ToBigInt
        + TryFrom<BigInt>
        + Send
        + Sync
        + 'static,
{
    fn denominator_value(&self) -> Self {
        Ratio::from_integer(self.denom().clone())
    }

    fn lcm_integer(&self, other: &Self) -> Self {
        Ratio::from_integer(self.to_integer().lcm(&other.to_integer()))
    }

    fn to_rational(&self) -> BigRational {
        let numer = self.numer().to_bigint().expect("integer converts to BigInt");
        let denom = self.denom().to_bigint().expect("integer converts to BigInt");
        BigRational::new(numer, denom)
    }

    fn from_rational(value: &BigRational) -> Option<Self> {
        let numer = I::try_from(value.numer().clone()).ok()?;
        let denom = I::try_from(value.denom().clone()).ok()?;
        Some(Ratio::new(numer, denom))
    }
}

/// Parses an integer or `p/q` string into a scalar.
pub fn parse_scalar<T: Scalar>(text: &str) -> Option<T> {
    let trimmed = text.trim();
    let parsed: BigRational = match trimmed.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().ok()?;
            let d: BigInt = d.trim().parse().ok()?;
            if d == BigInt::from(0) {
                return None;
            }
            BigRational::new(n, d)
        }
        None => BigRational::from_integer(trimmed.parse().ok()?),
    };
    T::from_rational(&parsed)
}

/// Renders `value` as a plain decimal string with `digits` significant digits,
/// rounding half away from zero. Independent of locale.
pub fn format_significant(value: &BigRational, digits: usize) -> String {
    use num_traits::{One, Zero};
    if value.is_zero() {
        return format!("{:.*}", digits.saturating_sub(1), 0.0_f64);
    }
    let negative = value.is_negative();
    let magnitude = value.abs();
    let ten = BigRational::from_integer(BigInt::from(10));

    // exponent e with 10^e <= magnitude < 10^(e+1)
    let mut exponent: i64 = 0;
    let mut scaled = magnitude.clone();
    while scaled >= ten {
        scaled /= &ten;
        exponent += 1;
    }
    while scaled < BigRational::one() {
        scaled *= &ten;
        exponent -= 1;
    }
    // integer with `digits` digits: round(magnitude * 10^(digits-1-exponent))
    let shift = digits as i64 - 1 - exponent;
    let factor = num_traits::pow(BigRational::from_integer(BigInt::from(10)), shift.unsigned_abs() as usize);
    let shifted = if shift >= 0 { &magnitude * &factor } else { &magnitude / &factor };
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    let mut mantissa = (shifted + half).floor().to_integer();
    let mut shift = shift;
    if mantissa.to_string().len() > digits {
        // rounding carried into a new digit
        mantissa /= 10;
        shift -= 1;
    }
    let mut text = mantissa.to_string();
    let body = if shift <= 0 {
        text.push_str(&"0".repeat(shift.unsigned_abs() as usize));
        text
    } else {
        let shift = shift as usize;
        if text.len() <= shift {
            format!("0.{}{}", "0".repeat(shift - text.len()), text)
        } else {
            let split = text.len() - shift;
            format!("{}.{}", &text[..split], &text[split..])
        }
    };
    if negative {
        format!("-{body}")
    } else {
        body
    }
}
