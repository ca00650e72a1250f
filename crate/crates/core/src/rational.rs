//! Exact arbitrary-precision rationals.
//!
//! Every value, cost, budget, payment and revenue in this crate is a
//! [`Rational`]. Comparisons are exact, so ties in the suppression order and
//! floor discontinuities in the allocation cap never depend on rounding.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::McsError;

/// An exact rational number, always kept in lowest terms with a positive
/// denominator.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Rational(BigRational);

impl Rational {
    pub fn zero() -> Self {
        Rational(BigRational::zero())
    }

    pub fn one() -> Self {
        Rational(BigRational::one())
    }

    pub fn from_integer(n: i64) -> Self {
        Rational(BigRational::from_integer(BigInt::from(n)))
    }

    /// `numer / denom`. Panics if `denom == 0`.
    pub fn new(numer: i64, denom: i64) -> Self {
        Rational(BigRational::new(BigInt::from(numer), BigInt::from(denom)))
    }

    pub fn from_big(numer: BigInt, denom: BigInt) -> Self {
        Rational(BigRational::new(numer, denom))
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn recip(&self) -> Self {
        Rational(self.0.recip())
    }

    pub fn abs(&self) -> Self {
        Rational(self.0.abs())
    }

    /// Largest integer not greater than `self`.
    pub fn floor(&self) -> BigInt {
        self.0.numer().div_floor(self.0.denom())
    }

    /// `floor(self)` saturated into `i64`.
    pub fn floor_i64(&self) -> i64 {
        let f = self.floor();
        f.to_i64()
            .unwrap_or(if f.is_negative() { i64::MIN } else { i64::MAX })
    }

    pub fn min(self, other: Self) -> Self {
        std::cmp::min(self, other)
    }

    pub fn max(self, other: Self) -> Self {
        std::cmp::max(self, other)
    }

    /// Lossy conversion for reporting only.
    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Compares `a/b` with `c/d` by cross-multiplication (`b, d > 0`).
    pub fn cmp_ratio(a: &Rational, b: &Rational, c: &Rational, d: &Rational) -> Ordering {
        (a * d).cmp(&(c * b))
    }

    /// Decimal text when the expansion terminates, `p/q` otherwise.
    pub fn to_decimal_string(&self) -> String {
        let denom = self.0.denom().clone();
        let mut rest = denom.clone();
        let (two, five) = (BigInt::from(2), BigInt::from(5));
        let mut twos = 0u32;
        let mut fives = 0u32;
        while rest.is_even() {
            rest /= &two;
            twos += 1;
        }
        while (&rest % &five).is_zero() {
            rest /= &five;
            fives += 1;
        }
        if !rest.is_one() {
            return format!("{}/{}", self.0.numer(), denom);
        }
        let digits = twos.max(fives);
        if digits == 0 {
            return self.0.numer().to_string();
        }
        let scale = num_traits::pow(BigInt::from(10), digits as usize);
        let scaled = self.0.numer() * (&scale / &denom);
        let negative = scaled.is_negative();
        let mag = scaled.abs().to_string();
        let width = digits as usize + 1;
        let padded = format!("{mag:0>width$}");
        let (int_part, frac_part) = padded.split_at(padded.len() - digits as usize);
        let frac_part = frac_part.trim_end_matches('0');
        let sign = if negative { "-" } else { "" };
        if frac_part.is_empty() {
            format!("{sign}{int_part}")
        } else {
            format!("{sign}{int_part}.{frac_part}")
        }
    }
}

impl FromStr for Rational {
    type Err = McsError;

    /// Accepts plain decimals (`"12"`, `"-0.125"`) and fractions (`"1/3"`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || McsError::Parse(format!("invalid rational literal {s:?}"));
        let t = s.trim();
        if t.is_empty() {
            return Err(bad());
        }
        if let Some((n, d)) = t.split_once('/') {
            let n: BigInt = n.trim().parse().map_err(|_| bad())?;
            let d: BigInt = d.trim().parse().map_err(|_| bad())?;
            if d.is_zero() {
                return Err(bad());
            }
            return Ok(Rational(BigRational::new(n, d)));
        }
        let (negative, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part
            .chars()
            .chain(frac_part.chars())
            .all(|c| c.is_ascii_digit())
        {
            return Err(bad());
        }
        let digits = format!("{int_part}{frac_part}");
        let mut numer: BigInt = if digits.is_empty() {
            BigInt::zero()
        } else {
            digits.parse().map_err(|_| bad())?
        };
        if negative {
            numer = -numer;
        }
        let denom = num_traits::pow(BigInt::from(10), frac_part.len());
        Ok(Rational(BigRational::new(numer, denom)))
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal_string())
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_decimal_string())
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl From<i64> for Rational {
    fn from(n: i64) -> Self {
        Rational::from_integer(n)
    }
}

impl From<BigInt> for Rational {
    fn from(n: BigInt) -> Self {
        Rational(BigRational::from_integer(n))
    }
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident) => {
        impl $trait<&Rational> for &Rational {
            type Output = Rational;
            fn $method(self, rhs: &Rational) -> Rational {
                Rational((&self.0).$method(&rhs.0))
            }
        }
        impl $trait<Rational> for Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                Rational(self.0.$method(rhs.0))
            }
        }
        impl $trait<&Rational> for Rational {
            type Output = Rational;
            fn $method(self, rhs: &Rational) -> Rational {
                Rational(self.0.$method(&rhs.0))
            }
        }
        impl $trait<Rational> for &Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                Rational((&self.0).$method(rhs.0))
            }
        }
    };
}

forward_binop!(Add, add);
forward_binop!(Sub, sub);
forward_binop!(Mul, mul);
forward_binop!(Div, div);

impl AddAssign<&Rational> for Rational {
    fn add_assign(&mut self, rhs: &Rational) {
        self.0 += &rhs.0;
    }
}

impl AddAssign for Rational {
    fn add_assign(&mut self, rhs: Rational) {
        self.0 += rhs.0;
    }
}

impl SubAssign<&Rational> for Rational {
    fn sub_assign(&mut self, rhs: &Rational) {
        self.0 -= &rhs.0;
    }
}

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-self.0)
    }
}

impl Mul<i64> for &Rational {
    type Output = Rational;
    fn mul(self, rhs: i64) -> Rational {
        Rational(&self.0 * BigRational::from_integer(BigInt::from(rhs)))
    }
}

impl Mul<usize> for &Rational {
    type Output = Rational;
    fn mul(self, rhs: usize) -> Rational {
        Rational(&self.0 * BigRational::from_integer(BigInt::from(rhs)))
    }
}

impl Sum for Rational {
    fn sum<I: Iterator<Item = Rational>>(iter: I) -> Rational {
        iter.fold(Rational::zero(), |acc, x| acc + x)
    }
}

impl<'a> Sum<&'a Rational> for Rational {
    fn sum<I: Iterator<Item = &'a Rational>>(iter: I) -> Rational {
        iter.fold(Rational::zero(), |acc, x| acc + x)
    }
}

/// Shorthand for parsing a literal in tests and examples. Panics on bad input.
pub fn q(s: &str) -> Rational {
    s.parse().expect("rational literal")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_decimals_and_fractions() {
        assert_eq!(q("0.5"), Rational::new(1, 2));
        assert_eq!(q("10"), Rational::from_integer(10));
        assert_eq!(q("-1.25"), Rational::new(-5, 4));
        assert_eq!(q("2/6"), Rational::new(1, 3));
        assert_eq!(q(".5"), Rational::new(1, 2));
        assert!("".parse::<Rational>().is_err());
        assert!("1/0".parse::<Rational>().is_err());
        assert!("1e3".parse::<Rational>().is_err());
        assert!("-".parse::<Rational>().is_err());
    }

    #[test]
    fn formats_terminating_and_repeating() {
        assert_eq!(Rational::new(1, 2).to_string(), "0.5");
        assert_eq!(Rational::new(-5, 4).to_string(), "-1.25");
        assert_eq!(Rational::new(1, 3).to_string(), "1/3");
        assert_eq!(Rational::from_integer(40).to_string(), "40");
        assert_eq!(Rational::new(1, 1000).to_string(), "0.001");
        assert_eq!(Rational::new(-1, 20).to_string(), "-0.05");
    }

    #[test]
    fn floor_rounds_toward_negative_infinity() {
        assert_eq!(Rational::new(7, 2).floor_i64(), 3);
        assert_eq!(Rational::new(-7, 2).floor_i64(), -4);
        assert_eq!(Rational::new(-4, 2).floor_i64(), -2);
        assert_eq!(Rational::zero().floor_i64(), 0);
    }

    #[test]
    fn ratio_ties_are_exact() {
        // 1/3 against 0.3/0.9: equal, never decided by rounding
        assert_eq!(
            Rational::cmp_ratio(&q("1"), &q("3"), &q("0.3"), &q("0.9")),
            Ordering::Equal
        );
    }

    proptest! {
        #[test]
        fn display_parse_roundtrip(n in -100_000i64..100_000, d in 1i64..5_000) {
            let r = Rational::new(n, d);
            prop_assert_eq!(r.to_string().parse::<Rational>().unwrap(), r);
        }

        #[test]
        fn compare_agrees_with_cross_multiplication(
            a in -1000i64..1000, b in 1i64..1000, c in -1000i64..1000, d in 1i64..1000
        ) {
            let lhs = Rational::new(a, b).cmp(&Rational::new(c, d));
            prop_assert_eq!(lhs, (a * d).cmp(&(c * b)));
        }
    }
}
