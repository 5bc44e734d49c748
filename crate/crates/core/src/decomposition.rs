//! Mantissa product split: `(1+M0)(1+M1) = (1 + M0 + M1) + M0*M1`.
//!
//! The first term (sub-ADD) is cheap and carries at least 3/4 of the
//! product; the second (sub-MUL) is the expensive part and carries at most
//! `M0*M1 / ((1+M0)(1+M1)) < 1/4` of it.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::exact::ExactReal;
use crate::fp::FpValue;

/// A fraction `value / 2^scale_bits` in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MantissaFraction {
    value: u64,
    scale_bits: u32,
}

impl MantissaFraction {
    pub fn new(value: u64, scale_bits: u32) -> Result<Self> {
        if scale_bits > 62 || value >= 1u64 << scale_bits {
            return Err(Error::config(format!(
                "{value}/2^{scale_bits} is not a fraction in [0, 1)"
            )));
        }
        Ok(Self { value, scale_bits })
    }

    /// The stored fraction `M` of a floating-point value.
    pub fn of(v: &FpValue) -> Self {
        Self {
            value: v.mantissa() as u64,
            scale_bits: v.format().mantissa_bits,
        }
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn scale_bits(&self) -> u32 {
        self.scale_bits
    }

    pub fn to_exact(&self) -> ExactReal {
        ExactReal::new(self.value, -(self.scale_bits as i64))
    }

    /// Every fraction with `scale_bits` bits.
    pub fn all(scale_bits: u32) -> impl Iterator<Item = MantissaFraction> {
        (0..1u64 << scale_bits).map(move |value| MantissaFraction { value, scale_bits })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitProduct {
    /// `1 + M0 + M1`, in `[1, 3)`.
    pub sub_add: ExactReal,
    /// `M0 * M1`, in `[0, 1)`.
    pub sub_mul: ExactReal,
}

impl SplitProduct {
    /// `sub_add + sub_mul`, the full significand product.
    pub fn product(&self) -> ExactReal {
        &self.sub_add + &self.sub_mul
    }
}

pub fn split_mantissa_product(m0: MantissaFraction, m1: MantissaFraction) -> SplitProduct {
    let a = m0.to_exact();
    let b = m1.to_exact();
    SplitProduct {
        sub_add: &(&ExactReal::one() + &a) + &b,
        sub_mul: &a * &b,
    }
}

/// Share of the significand product carried by sub-MUL:
/// `M0*M1 / ((1+M0)(1+M1))`. Not dyadic in general, hence a rational.
pub fn significance_ratio(m0: MantissaFraction, m1: MantissaFraction) -> BigRational {
    let sp = split_mantissa_product(m0, m1);
    if sp.sub_mul.is_zero() {
        return BigRational::zero();
    }
    sp.sub_mul.to_rational() / sp.product().to_rational()
}

/// `sub_add + sub_mul_approx`: exact sub-ADD recombined with an
/// approximate (quantized, or dropped) sub-MUL.
pub fn recombine(sp: &SplitProduct, sub_mul_approx: &ExactReal) -> ExactReal {
    &sp.sub_add + sub_mul_approx
}

/// `|approx - exact| / |exact|`, zero when both are zero.
pub fn relative_error(approx: &ExactReal, exact: &ExactReal) -> Result<BigRational> {
    let diff = (approx - exact).abs();
    if exact.is_zero() {
        if diff.is_zero() {
            return Ok(BigRational::zero());
        }
        return Err(Error::DivisionByZero("relative error against an exact zero"));
    }
    Ok(diff.to_rational() / exact.abs().to_rational())
}

pub(crate) fn rational(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}
