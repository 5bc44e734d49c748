//! Digital exponent path: per-lane exponent sums, the batch maximum, and
//! right-shift alignment of significands against that maximum. Exact
//! integer arithmetic throughout.

use crate::error::{Error, Result};
use crate::fp::FpValue;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExponentLane {
    pub w_exp: i32,
    pub x_exp: i32,
    pub sum: i32,
    /// `E_max - sum`; only meaningful after [`assign_shifts`].
    pub shift: u32,
    /// A zero operand makes the lane contribute nothing; it is excluded from
    /// the maximum.
    pub inert: bool,
}

/// Unbiased exponent sums of each weight/activation pair.
pub fn exponent_sums(w: &[FpValue], x: &[FpValue]) -> Result<Vec<ExponentLane>> {
    if w.len() != x.len() {
        return Err(Error::LengthMismatch {
            left: w.len(),
            right: x.len(),
        });
    }
    Ok(w.iter()
        .zip(x)
        .map(|(a, b)| {
            let (w_exp, x_exp) = (a.unbiased_exponent(), b.unbiased_exponent());
            ExponentLane {
                w_exp,
                x_exp,
                sum: w_exp + x_exp,
                shift: 0,
                inert: a.is_zero() || b.is_zero(),
            }
        })
        .collect())
}

pub fn max_exponent(lanes: &[ExponentLane]) -> Result<i32> {
    lanes
        .iter()
        .filter(|l| !l.inert)
        .map(|l| l.sum)
        .max()
        .ok_or(Error::AllLanesInert)
}

/// Writes `E_max - sum` into every live lane and returns `E_max`.
pub fn assign_shifts(lanes: &mut [ExponentLane]) -> Result<i32> {
    let e_max = max_exponent(lanes)?;
    for lane in lanes.iter_mut().filter(|l| !l.inert) {
        lane.shift = (e_max - lane.sum) as u32;
    }
    Ok(e_max)
}

/// Fixed-point significand of `width` bits, MSB weight `2^0`, LSB weight
/// `2^-(width-1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AlignedMantissa {
    value: u64,
    width: u32,
    /// Any nonzero bit was shifted out.
    pub sticky: bool,
}

impl AlignedMantissa {
    /// Raw `width`-bit pattern, no alignment.
    pub fn from_raw(value: u64, width: u32) -> Self {
        debug_assert!(width <= 63 && value >> width == 0);
        Self {
            value,
            width,
            sticky: false,
        }
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    /// Bit `j` counting from the MSB (the order the array consumes them).
    pub fn bit(&self, j: u32) -> bool {
        (self.value >> (self.width - 1 - j)) & 1 == 1
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.width).map(|j| self.bit(j)).collect()
    }

    /// `value / 2^(width-1)`.
    pub fn to_exact(&self) -> crate::exact::ExactReal {
        crate::exact::ExactReal::new(self.value, -(self.width as i64 - 1))
    }
}

/// Places `significand` (hidden bit at position `mantissa_bits`) at the top
/// of a `width`-bit register and shifts it right by `shift`, truncating.
/// Shifts of `width` or more leave an empty register.
pub fn align_mantissa(significand: u64, mantissa_bits: u32, shift: u32, width: u32) -> AlignedMantissa {
    assert!(
        width > mantissa_bits && width <= 63,
        "alignment width {width} cannot hold a {}-bit significand",
        mantissa_bits + 1
    );
    let top = significand << (width - 1 - mantissa_bits);
    if shift >= width {
        return AlignedMantissa {
            value: 0,
            width,
            sticky: top != 0,
        };
    }
    AlignedMantissa {
        value: top >> shift,
        width,
        sticky: top & ((1u64 << shift) - 1) != 0,
    }
}
