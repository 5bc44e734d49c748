//! Configurable binary floating-point formats, bit-exact encode/decode with
//! round-to-nearest-even, and exact (unrounded) multiply/add/dot oracles.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::ExactReal;

/// Which encodings of a format are reserved for NaN/Inf.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Specials {
    /// Every encoding is finite.
    None,
    /// Only all-ones exponent with all-ones mantissa is NaN (FP8 E4M3 style:
    /// no infinities, max finite 448).
    NanOnly,
    /// IEEE-754 style: the all-ones exponent is reserved.
    Ieee,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FpFormat {
    pub exponent_bits: u32,
    pub mantissa_bits: u32,
    pub bias: i32,
    pub specials: Specials,
}

impl FpFormat {
    pub const E4M3: FpFormat = FpFormat {
        exponent_bits: 4,
        mantissa_bits: 3,
        bias: 7,
        specials: Specials::NanOnly,
    };
    pub const E5M2: FpFormat = FpFormat {
        exponent_bits: 5,
        mantissa_bits: 2,
        bias: 15,
        specials: Specials::Ieee,
    };
    pub const FP16: FpFormat = FpFormat {
        exponent_bits: 5,
        mantissa_bits: 10,
        bias: 15,
        specials: Specials::Ieee,
    };
    pub const BF16: FpFormat = FpFormat {
        exponent_bits: 8,
        mantissa_bits: 7,
        bias: 127,
        specials: Specials::Ieee,
    };

    pub fn new(exponent_bits: u32, mantissa_bits: u32, bias: i32, specials: Specials) -> Result<Self> {
        if !(2..=15).contains(&exponent_bits) {
            return Err(Error::config(format!("exponent_bits must be in 2..=15, got {exponent_bits}")));
        }
        if !(1..=30).contains(&mantissa_bits) {
            return Err(Error::config(format!("mantissa_bits must be in 1..=30, got {mantissa_bits}")));
        }
        Ok(Self {
            exponent_bits,
            mantissa_bits,
            bias,
            specials,
        })
    }

    /// `E{e}M{m}`, or the preset alias.
    pub fn name(&self) -> String {
        match *self {
            Self::FP16 => "FP16".into(),
            Self::BF16 => "BF16".into(),
            _ => format!("E{}M{}", self.exponent_bits, self.mantissa_bits),
        }
    }

    pub fn max_stored_exponent(&self) -> u32 {
        let all_ones = (1u32 << self.exponent_bits) - 1;
        match self.specials {
            Specials::Ieee => all_ones - 1,
            _ => all_ones,
        }
    }

    pub fn max_mantissa(&self) -> u32 {
        (1u32 << self.mantissa_bits) - 1
    }

    /// Unbiased exponent of the smallest normal (also the scale of subnormals).
    pub fn min_normal_exponent(&self) -> i32 {
        1 - self.bias
    }

    pub fn is_finite_encoding(&self, stored_exponent: u32, mantissa: u32) -> bool {
        if stored_exponent >= (1 << self.exponent_bits) || mantissa > self.max_mantissa() {
            return false;
        }
        let all_ones = (1u32 << self.exponent_bits) - 1;
        match self.specials {
            Specials::None => true,
            Specials::NanOnly => !(stored_exponent == all_ones && mantissa == self.max_mantissa()),
            Specials::Ieee => stored_exponent != all_ones,
        }
    }

    pub fn max_finite(&self) -> FpValue {
        let e = self.max_stored_exponent();
        let m = if self.is_finite_encoding(e, self.max_mantissa()) {
            self.max_mantissa()
        } else {
            self.max_mantissa() - 1
        };
        FpValue {
            sign: false,
            stored_exponent: e,
            mantissa: m,
            format: *self,
        }
    }

    pub fn total_bits(&self) -> u32 {
        1 + self.exponent_bits + self.mantissa_bits
    }

    /// Every finite encoding, in bit-pattern order.
    pub fn all_finite(&self) -> impl Iterator<Item = FpValue> + '_ {
        let fmt = *self;
        (0u32..(1 << self.total_bits())).filter_map(move |bits| FpValue::from_bits(bits, fmt).ok())
    }
}

impl fmt::Display for FpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for FpFormat {
    type Err = Error;

    /// Accepts the preset names and generic `EnMm` (IEEE-style specials,
    /// bias `2^(n-1)-1`).
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "E4M3" | "FP8" => Ok(Self::E4M3),
            "E5M2" => Ok(Self::E5M2),
            "FP16" | "E5M10" => Ok(Self::FP16),
            "BF16" | "E8M7" => Ok(Self::BF16),
            other => {
                let bad = || Error::config(format!("unknown format {s:?}"));
                let rest = other.strip_prefix('E').ok_or_else(bad)?;
                let (e, m) = rest.split_once('M').ok_or_else(bad)?;
                let e: u32 = e.parse().map_err(|_| bad())?;
                let m: u32 = m.parse().map_err(|_| bad())?;
                if e < 2 {
                    return Err(bad());
                }
                FpFormat::new(e, m, (1 << (e - 1)) - 1, Specials::Ieee)
            }
        }
    }
}

/// A finite value of some [`FpFormat`]: `(-1)^sign * 2^E * 1.M`, or
/// `0.M * 2^(1-bias)` when the stored exponent is zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FpValue {
    sign: bool,
    stored_exponent: u32,
    mantissa: u32,
    format: FpFormat,
}

impl FpValue {
    pub fn new(sign: bool, stored_exponent: u32, mantissa: u32, format: FpFormat) -> Result<Self> {
        if stored_exponent >= (1 << format.exponent_bits) || mantissa > format.max_mantissa() {
            return Err(Error::config(format!(
                "fields ({stored_exponent}, {mantissa}) out of range for {format}"
            )));
        }
        if !format.is_finite_encoding(stored_exponent, mantissa) {
            return Err(Error::UnsupportedSpecial(format!(
                "{format} encoding with exponent {stored_exponent}, mantissa {mantissa}"
            )));
        }
        Ok(Self {
            sign,
            stored_exponent,
            mantissa,
            format,
        })
    }

    pub fn zero(format: FpFormat) -> Self {
        Self {
            sign: false,
            stored_exponent: 0,
            mantissa: 0,
            format,
        }
    }

    pub fn from_bits(bits: u32, format: FpFormat) -> Result<Self> {
        let m = format.mantissa_bits;
        let e = format.exponent_bits;
        if bits >> (1 + e + m) != 0 {
            return Err(Error::config(format!("{bits:#x} is wider than {format}")));
        }
        Self::new(
            (bits >> (e + m)) & 1 == 1,
            (bits >> m) & ((1 << e) - 1),
            bits & format.max_mantissa(),
            format,
        )
    }

    pub fn to_bits(&self) -> u32 {
        let f = &self.format;
        ((self.sign as u32) << (f.exponent_bits + f.mantissa_bits))
            | (self.stored_exponent << f.mantissa_bits)
            | self.mantissa
    }

    pub fn sign(&self) -> bool {
        self.sign
    }

    pub fn stored_exponent(&self) -> u32 {
        self.stored_exponent
    }

    pub fn mantissa(&self) -> u32 {
        self.mantissa
    }

    pub fn format(&self) -> FpFormat {
        self.format
    }

    pub fn is_zero(&self) -> bool {
        self.stored_exponent == 0 && self.mantissa == 0
    }

    pub fn is_subnormal(&self) -> bool {
        self.stored_exponent == 0 && self.mantissa != 0
    }

    /// Effective unbiased exponent `E` (subnormals use `1 - bias`).
    pub fn unbiased_exponent(&self) -> i32 {
        self.stored_exponent.max(1) as i32 - self.format.bias
    }

    /// Significand as an integer with the hidden bit in position
    /// `mantissa_bits` (zero for subnormals and zero).
    pub fn significand(&self) -> u64 {
        let hidden = (self.stored_exponent != 0) as u64;
        (hidden << self.format.mantissa_bits) | self.mantissa as u64
    }

    pub fn neg(&self) -> Self {
        Self {
            sign: !self.sign,
            ..*self
        }
    }

    pub fn to_f64(&self) -> f64 {
        decode(self).to_f64()
    }
}

impl fmt::Display for FpValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", decode(self))
    }
}

impl Serialize for FpValue {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        (self.sign as u8, self.stored_exponent, self.mantissa).serialize(serializer)
    }
}

/// Exact value of `v`.
pub fn decode(v: &FpValue) -> ExactReal {
    let sig = v.significand() as i64;
    let sig = if v.sign { -sig } else { sig };
    ExactReal::new(
        sig,
        v.unbiased_exponent() as i64 - v.format.mantissa_bits as i64,
    )
}

/// Rounds `x` to the nearest value of `fmt` (ties to even mantissa).
/// Zero, including values that round to zero, encodes as all-zero fields.
pub fn encode(x: &ExactReal, fmt: FpFormat) -> Result<FpValue> {
    let Some(msb) = x.msb_exponent() else {
        return Ok(FpValue::zero(fmt));
    };
    let m = fmt.mantissa_bits as i64;
    let lsb = x.exponent();
    let quantum = msb.max(fmt.min_normal_exponent() as i64) - m;
    let mag = x.magnitude();
    let n = if lsb >= quantum {
        mag << (lsb - quantum) as u64
    } else {
        shift_right_nearest_even(mag, (quantum - lsb) as u64)
    };
    let mut n = n.to_u64().expect("rounded significand fits m + 2 bits");
    if n == 0 {
        return Ok(FpValue::zero(fmt));
    }
    let mut quantum = quantum;
    if n == 1 << (m + 1) {
        n >>= 1;
        quantum += 1;
    }
    let overflow = || Error::Overflow {
        value: x.to_string(),
        format: fmt.name(),
    };
    let (stored, mantissa) = if n < (1 << m) {
        (0u32, n as u32)
    } else {
        let stored = quantum + m + fmt.bias as i64;
        if stored > fmt.max_stored_exponent() as i64 {
            return Err(overflow());
        }
        (stored as u32, (n - (1 << m)) as u32)
    };
    if !fmt.is_finite_encoding(stored, mantissa) {
        return Err(overflow());
    }
    Ok(FpValue {
        sign: x.is_negative(),
        stored_exponent: stored,
        mantissa,
        format: fmt,
    })
}

pub fn encode_f64(x: f64, fmt: FpFormat) -> Result<FpValue> {
    encode(&ExactReal::from_f64(x)?, fmt)
}

fn shift_right_nearest_even(mag: &BigUint, shift: u64) -> BigUint {
    let q = mag >> shift;
    let rem = mag - (&q << shift);
    let half = BigUint::one() << (shift - 1);
    if rem > half || (rem == half && q.bit(0)) {
        q + 1u32
    } else {
        q
    }
}

/// Exact product: exponents add, significands multiply, no rounding.
pub fn fp_mul_exact(a: &FpValue, b: &FpValue) -> ExactReal {
    let sign = a.sign ^ b.sign;
    let sig = a.significand() as i128 * b.significand() as i128;
    let exponent = a.unbiased_exponent() as i64 + b.unbiased_exponent() as i64
        - a.format.mantissa_bits as i64
        - b.format.mantissa_bits as i64;
    ExactReal::new(if sign { -sig } else { sig }, exponent)
}

/// Exact sum by explicit alignment: find the largest exponent, shift every
/// addend right by its distance from it (keeping every shifted-out bit),
/// then add. The second result is the sum rounded into `out_fmt`.
pub fn fp_add_exact(values: &[ExactReal], out_fmt: FpFormat) -> Result<(ExactReal, FpValue)> {
    let sum = aligned_sum(values);
    let rounded = encode(&sum, out_fmt)?;
    Ok((sum, rounded))
}

pub(crate) fn aligned_sum(values: &[ExactReal]) -> ExactReal {
    let nonzero: Vec<&ExactReal> = values.iter().filter(|v| !v.is_zero()).collect();
    let Some(e_max) = nonzero.iter().filter_map(|v| v.msb_exponent()).max() else {
        return ExactReal::zero();
    };
    // fraction bits below E_max needed to hold every addend losslessly
    let frac_bits = nonzero
        .iter()
        .map(|v| e_max - v.exponent())
        .max()
        .unwrap_or(0)
        .max(0);
    let mut acc = num_bigint::BigInt::zero();
    for v in nonzero {
        let (aligned, lost) = v.floor_scaled(frac_bits - e_max);
        debug_assert!(!lost);
        acc += aligned;
    }
    ExactReal::new(acc, e_max - frac_bits)
}

/// Exact `sum_i w_i * x_i`.
pub fn fp_dot_exact(w: &[FpValue], x: &[FpValue]) -> Result<ExactReal> {
    if w.len() != x.len() {
        return Err(Error::LengthMismatch {
            left: w.len(),
            right: x.len(),
        });
    }
    if w.is_empty() {
        return Err(Error::Empty);
    }
    let products: Vec<ExactReal> = w.iter().zip(x).map(|(a, b)| fp_mul_exact(a, b)).collect();
    Ok(aligned_sum(&products))
}
