//! Hybrid floating-point dot product: digital exponent alignment and
//! sub-ADD, analog sub-MUL, fixed-point recombination.

use serde::Serialize;

use crate::cim::array::{store_weights, sub_add_bit_serial};
use crate::cim::mac::{AnalogTrace, MacroInstance};
use crate::error::{Error, Result};
use crate::exact::ExactReal;
use crate::exponent::{align_mantissa, assign_shifts, exponent_sums, AlignedMantissa};
use crate::fp::{encode, FpFormat, FpValue};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DotFlags {
    /// Subnormal operands replaced by zero before alignment.
    pub subnormals_flushed: usize,
    /// Lanes that lost nonzero bits during alignment.
    pub sticky_lanes: usize,
    /// ADC conversions that clipped at the top code.
    pub adc_saturations: usize,
    pub accumulator_saturated: bool,
    /// The bias had bits below the accumulator LSB.
    pub bias_truncated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridDotResult {
    /// `total` rounded to the output format.
    pub value: FpValue,
    /// Accumulator contents before output rounding (bias included).
    pub total: ExactReal,
    /// Signed sum of the aligned `2^-shift (1 + W_M + X_M)` terms, scaled
    /// by `2^E_max`.
    pub exact_sub_add: ExactReal,
    /// Signed sum of the dequantized analog `W_M * X_M` terms, scaled by
    /// `2^E_max`.
    pub quantized_sub_mul: ExactReal,
    /// `None` when every lane has a zero operand.
    pub e_max: Option<i32>,
    pub traces: Vec<AnalogTrace>,
    pub flags: DotFlags,
}

struct Accumulated {
    total: ExactReal,
    exact_sub_add: ExactReal,
    quantized_sub_mul: ExactReal,
    e_max: Option<i32>,
    traces: Vec<AnalogTrace>,
    flags: DotFlags,
}

/// Two's-complement accumulator of `bits` width that clamps instead of
/// wrapping.
struct Accumulator {
    value: i64,
    lo: i64,
    hi: i64,
    saturated: bool,
}

impl Accumulator {
    fn new(bits: u32) -> Self {
        Self {
            value: 0,
            lo: -(1i64 << (bits - 1)),
            hi: (1i64 << (bits - 1)) - 1,
            saturated: false,
        }
    }

    fn add(&mut self, delta: i128) {
        let next = self.value as i128 + delta;
        let clamped = next.clamp(self.lo as i128, self.hi as i128);
        self.saturated |= clamped != next;
        self.value = clamped as i64;
    }
}

fn signed(magnitude: u64, negative: bool) -> i128 {
    if negative {
        -(magnitude as i128)
    } else {
        magnitude as i128
    }
}

fn flush(v: &FpValue, flushed: &mut usize) -> FpValue {
    if v.is_subnormal() {
        *flushed += 1;
        FpValue::zero(v.format())
    } else {
        *v
    }
}

impl MacroInstance {
    pub fn hybrid_fp_dot(&mut self, w: &[FpValue], x: &[FpValue], out_fmt: FpFormat) -> Result<HybridDotResult> {
        self.hybrid_fp_dot_biased(w, x, None, out_fmt)
    }

    /// Dot product plus an optional bias added into the accumulator (at the
    /// accumulator's resolution, truncated toward zero) before the single
    /// output rounding.
    pub fn hybrid_fp_dot_biased(
        &mut self,
        w: &[FpValue],
        x: &[FpValue],
        bias: Option<&ExactReal>,
        out_fmt: FpFormat,
    ) -> Result<HybridDotResult> {
        let a = self.accumulate(w, x, bias)?;
        Ok(HybridDotResult {
            value: encode(&a.total, out_fmt)?,
            total: a.total,
            exact_sub_add: a.exact_sub_add,
            quantized_sub_mul: a.quantized_sub_mul,
            e_max: a.e_max,
            traces: a.traces,
            flags: a.flags,
        })
    }

    /// Accumulator contents and flags only, leaving output rounding (and
    /// its overflow policy) to the caller.
    pub fn hybrid_fp_dot_total(
        &mut self,
        w: &[FpValue],
        x: &[FpValue],
        bias: Option<&ExactReal>,
    ) -> Result<(ExactReal, DotFlags)> {
        let a = self.accumulate(w, x, bias)?;
        Ok((a.total, a.flags))
    }

    fn accumulate(&mut self, w: &[FpValue], x: &[FpValue], bias: Option<&ExactReal>) -> Result<Accumulated> {
        if w.len() != x.len() {
            return Err(Error::LengthMismatch {
                left: w.len(),
                right: x.len(),
            });
        }
        let cfg = self.config().clone();
        let width = cfg.input_bits;
        let wm = cfg.weight_bits - 1;
        for v in w {
            if v.format().mantissa_bits != wm {
                return Err(Error::config(format!(
                    "{} weights on a {}-column array",
                    v.format(),
                    cfg.weight_bits
                )));
            }
        }
        if wm + 1 > width {
            return Err(Error::config(format!(
                "{}-bit significands exceed the {width}-bit alignment register",
                wm + 1
            )));
        }
        if let Some(v) = x.iter().find(|v| v.format().mantissa_bits + 1 > width) {
            return Err(Error::config(format!(
                "{} activations exceed the {width}-bit alignment register",
                v.format()
            )));
        }

        let mut flags = DotFlags::default();
        let w: Vec<FpValue> = w.iter().map(|v| flush(v, &mut flags.subnormals_flushed)).collect();
        let x: Vec<FpValue> = x.iter().map(|v| flush(v, &mut flags.subnormals_flushed)).collect();
        let mut lanes = exponent_sums(&w, &x)?;
        let e_max = assign_shifts(&mut lanes).ok();

        // accumulator LSB = 2^(E_max - frac_bits)
        let frac_bits = wm + width - 1;
        let mut acc = Accumulator::new(cfg.acc_bits);
        let mut sub_add_total: i128 = 0;
        let mut sub_mul_total: i128 = 0;
        let mut analog_inputs = vec![0u64; w.len()];
        let mut negative = vec![false; w.len()];

        for (i, lane) in lanes.iter().enumerate() {
            if lane.inert {
                continue;
            }
            let (wv, xv) = (&w[i], &x[i]);
            let xm = xv.format().mantissa_bits;
            let x_sig = align_mantissa(xv.significand(), xm, lane.shift, width);
            let w_frac = align_mantissa(wv.mantissa() as u64, wm, lane.shift, width);
            let x_frac = align_mantissa(xv.mantissa() as u64, xm, lane.shift, width);
            if x_sig.sticky || w_frac.sticky || x_frac.sticky {
                flags.sticky_lanes += 1;
            }
            let neg = wv.sign() ^ xv.sign();
            let sub_add = sub_add_bit_serial(&x_sig.bits(), &w_frac.bits());
            sub_add_total += signed(sub_add, neg);
            acc.add(signed(sub_add, neg) << wm);
            analog_inputs[i] = x_frac.value();
            negative[i] = neg;
        }

        let mut traces = Vec::new();
        if e_max.is_some() {
            let rows = cfg.rows;
            for (tile, start) in (0..w.len()).step_by(rows).enumerate() {
                let end = (start + rows).min(w.len());
                let wa = store_weights(&w[start..end], &cfg)?.fraction_only();
                for pass in [false, true] {
                    let live = |i: usize| !lanes[i].inert && negative[i] == pass;
                    if !(start..end).any(live) {
                        continue;
                    }
                    let x_rows: Vec<AlignedMantissa> = (start..end)
                        .map(|i| AlignedMantissa::from_raw(if live(i) { analog_inputs[i] } else { 0 }, width))
                        .collect();
                    let (mac, mut trace) = self.macro_mac(&wa, &x_rows)?;
                    flags.adc_saturations += trace.adc_saturations();
                    sub_mul_total += signed(mac, pass);
                    acc.add(signed(mac, pass));
                    if self.record_traces {
                        trace.tile = tile;
                        trace.negative_pass = pass;
                        traces.push(trace);
                    }
                }
            }
        }

        // with no live lane the accumulator is anchored at the bias itself
        let anchor = e_max
            .map(i64::from)
            .or_else(|| bias.and_then(|b| b.msb_exponent()))
            .unwrap_or(0);
        let lsb = anchor - frac_bits as i64;
        if let Some(b) = bias.filter(|b| !b.is_zero()) {
            let (mag, lost) = b.abs().floor_scaled(-lsb);
            flags.bias_truncated = lost;
            let q: i128 = i128::try_from(mag).unwrap_or(i128::MAX);
            acc.add(if b.is_negative() { -q } else { q });
        }
        flags.accumulator_saturated = acc.saturated;

        Ok(Accumulated {
            total: ExactReal::new(acc.value, lsb),
            exact_sub_add: ExactReal::new(sub_add_total, anchor - (width as i64 - 1)),
            quantized_sub_mul: ExactReal::new(sub_mul_total, lsb),
            e_max,
            traces,
            flags,
        })
    }
}
