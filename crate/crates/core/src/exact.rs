//! Exact dyadic rationals (`n * 2^e`), the ground-truth scalar for every
//! oracle in the crate. Every finite binary floating-point value is dyadic,
//! and the set is closed under addition and multiplication, so nothing here
//! ever rounds.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Float, One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// `numerator * 2^exponent`, kept normalized: the numerator is odd, or the
/// value is zero with exponent 0. Structural equality is value equality.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ExactReal {
    numerator: BigInt,
    exponent: i64,
}

impl ExactReal {
    pub fn new(numerator: impl Into<BigInt>, exponent: i64) -> Self {
        let numerator = numerator.into();
        match numerator.trailing_zeros() {
            None => Self::zero(),
            Some(tz) => Self {
                numerator: numerator >> tz,
                exponent: exponent + tz as i64,
            },
        }
    }

    pub fn zero() -> Self {
        Self {
            numerator: BigInt::zero(),
            exponent: 0,
        }
    }

    pub fn one() -> Self {
        Self::new(1, 0)
    }

    pub fn from_int(v: i64) -> Self {
        Self::new(v, 0)
    }

    /// `2^e`.
    pub fn pow2(e: i64) -> Self {
        Self::new(1, e)
    }

    /// Exact conversion; every finite `f64` is dyadic.
    pub fn from_f64(x: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::UnsupportedSpecial(format!("{x}")));
        }
        let (mantissa, exp, sign) = x.integer_decode();
        Ok(Self::new(BigInt::from(sign as i64) * BigInt::from(mantissa), exp as i64))
    }

    /// Nearest `f64` (one rounding of the numerator, then exact scaling
    /// unless the result leaves the normal range).
    pub fn to_f64(&self) -> f64 {
        let mut v = self.numerator.to_f64().unwrap_or(f64::NAN);
        let mut e = self.exponent;
        while e != 0 {
            let step = e.clamp(-1000, 1000);
            v *= 2f64.powi(step as i32);
            e -= step;
        }
        v
    }

    /// Parses a decimal literal (`-1.25`, `3e-2`). Exact when the literal
    /// is dyadic; otherwise the literal is rounded to the nearest `f64`.
    pub fn from_decimal_str(s: &str) -> Result<Self> {
        match parse_dyadic_decimal(s) {
            Some(v) => Ok(v),
            None => {
                let x: f64 = s
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(0, 0, format!("not a number: {s:?}")))?;
                Self::from_f64(x)
            }
        }
    }

    pub fn numerator(&self) -> &BigInt {
        &self.numerator
    }

    pub fn exponent(&self) -> i64 {
        self.exponent
    }

    pub fn is_zero(&self) -> bool {
        self.numerator.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.numerator.is_negative()
    }

    pub fn signum(&self) -> i32 {
        match self.numerator.sign() {
            Sign::Minus => -1,
            Sign::NoSign => 0,
            Sign::Plus => 1,
        }
    }

    pub fn abs(&self) -> Self {
        Self {
            numerator: self.numerator.abs(),
            exponent: self.exponent,
        }
    }

    pub fn magnitude(&self) -> &BigUint {
        self.numerator.magnitude()
    }

    /// `floor(log2(|x|))`, `None` for zero.
    pub fn msb_exponent(&self) -> Option<i64> {
        if self.is_zero() {
            None
        } else {
            Some(self.exponent + self.numerator.bits() as i64 - 1)
        }
    }

    /// Multiplies by `2^k`.
    pub fn scale_pow2(&self, k: i64) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        Self {
            numerator: self.numerator.clone(),
            exponent: self.exponent + k,
        }
    }

    pub fn to_rational(&self) -> BigRational {
        if self.exponent >= 0 {
            BigRational::from_integer(&self.numerator << self.exponent as u64)
        } else {
            BigRational::new(
                self.numerator.clone(),
                BigInt::one() << (-self.exponent) as u64,
            )
        }
    }

    /// `floor(self * 2^k)` as an integer, with a flag telling whether any
    /// nonzero bits were discarded.
    pub fn floor_scaled(&self, k: i64) -> (BigInt, bool) {
        let e = self.exponent + k;
        if e >= 0 {
            (&self.numerator << e as u64, false)
        } else {
            let d = BigInt::one() << (-e) as u64;
            let (q, r) = self.numerator.div_mod_floor(&d);
            (q, !r.is_zero())
        }
    }
}

fn parse_dyadic_decimal(s: &str) -> Option<ExactReal> {
    let s = s.trim();
    let (negative, body) = match s.as_bytes().first()? {
        b'-' => (true, &s[1..]),
        b'+' => (false, &s[1..]),
        _ => (false, s),
    };
    let (mantissa, exp10) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], body[i + 1..].parse::<i64>().ok()?),
        None => (body, 0),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits: BigInt = format!("{int_part}{frac_part}0").parse().ok()?;
    let digits: BigInt = digits / 10;
    let p = exp10 - frac_part.len() as i64;
    let value = if p >= 0 {
        ExactReal::new(digits * BigInt::from(10).pow(p as u32), 0)
    } else {
        let k = (-p) as u32;
        let five_k = BigInt::from(5).pow(k);
        let (q, r) = digits.div_rem(&five_k);
        if !r.is_zero() {
            return None;
        }
        ExactReal::new(q, -(k as i64))
    };
    Some(if negative { -value } else { value })
}

impl Default for ExactReal {
    fn default() -> Self {
        Self::zero()
    }
}

impl Add for &ExactReal {
    type Output = ExactReal;
    fn add(self, rhs: &ExactReal) -> ExactReal {
        if self.is_zero() {
            return rhs.clone();
        }
        if rhs.is_zero() {
            return self.clone();
        }
        let e = self.exponent.min(rhs.exponent);
        let a = &self.numerator << (self.exponent - e) as u64;
        let b = &rhs.numerator << (rhs.exponent - e) as u64;
        ExactReal::new(a + b, e)
    }
}

impl Add for ExactReal {
    type Output = ExactReal;
    fn add(self, rhs: ExactReal) -> ExactReal {
        &self + &rhs
    }
}

impl Sub for &ExactReal {
    type Output = ExactReal;
    fn sub(self, rhs: &ExactReal) -> ExactReal {
        self + &(-rhs)
    }
}

impl Sub for ExactReal {
    type Output = ExactReal;
    fn sub(self, rhs: ExactReal) -> ExactReal {
        &self - &rhs
    }
}

impl Mul for &ExactReal {
    type Output = ExactReal;
    fn mul(self, rhs: &ExactReal) -> ExactReal {
        ExactReal::new(&self.numerator * &rhs.numerator, self.exponent + rhs.exponent)
    }
}

impl Mul for ExactReal {
    type Output = ExactReal;
    fn mul(self, rhs: ExactReal) -> ExactReal {
        &self * &rhs
    }
}

impl Neg for &ExactReal {
    type Output = ExactReal;
    fn neg(self) -> ExactReal {
        ExactReal {
            numerator: -&self.numerator,
            exponent: self.exponent,
        }
    }
}

impl Neg for ExactReal {
    type Output = ExactReal;
    fn neg(self) -> ExactReal {
        -&self
    }
}

impl std::iter::Sum for ExactReal {
    fn sum<I: Iterator<Item = ExactReal>>(iter: I) -> Self {
        iter.fold(ExactReal::zero(), |acc, x| &acc + &x)
    }
}

impl Ord for ExactReal {
    fn cmp(&self, other: &Self) -> Ordering {
        (self - other).signum().cmp(&0)
    }
}

impl PartialOrd for ExactReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact decimal expansion (dyadic rationals always terminate).
impl fmt::Display for ExactReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exponent >= 0 {
            return write!(f, "{}", &self.numerator << self.exponent as u64);
        }
        let k = (-self.exponent) as usize;
        let digits = (self.numerator.magnitude() * BigUint::from(5u32).pow(k as u32)).to_string();
        let digits = format!("{digits:0>width$}", width = k + 1);
        let (int_part, frac_part) = digits.split_at(digits.len() - k);
        let sign = if self.is_negative() { "-" } else { "" };
        write!(f, "{sign}{int_part}.{frac_part}")
    }
}

impl fmt::Debug for ExactReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExactReal({self})")
    }
}

impl FromStr for ExactReal {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_dyadic_decimal(s).ok_or_else(|| Error::parse(0, 0, format!("not a dyadic decimal: {s:?}")))
    }
}

impl Serialize for ExactReal {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExactReal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        ExactReal::from_decimal_str(&s).map_err(serde::de::Error::custom)
    }
}
