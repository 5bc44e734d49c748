//! Weight storage and the per-cell logic shared by both compute paths.

use crate::cim::config::{MacroConfig, MAX_COLUMNS};
use crate::error::{Error, Result};
use crate::fp::FpValue;

/// Row `i` holds the significand bits of weight `i`, MSB in column 0.
/// Signs are kept on the digital side.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightArray {
    rows: Vec<u32>,
    signs: Vec<bool>,
    columns: u32,
    /// Bit `i` of `column_masks[c]` is row `i`'s bit in column `c`.
    column_masks: [u64; MAX_COLUMNS],
}

impl WeightArray {
    /// Raw unsigned `weight_bits`-wide row values; rows past the list are zero.
    pub fn from_integers(values: &[u32], cfg: &MacroConfig) -> Result<Self> {
        if values.len() > cfg.rows {
            return Err(Error::TooManyRows {
                count: values.len(),
                rows: cfg.rows,
            });
        }
        if let Some(v) = values.iter().find(|&&v| v >> cfg.weight_bits != 0) {
            return Err(Error::config(format!("{v} does not fit {} weight bits", cfg.weight_bits)));
        }
        let mut rows = values.to_vec();
        rows.resize(cfg.rows, 0);
        Ok(Self::build(rows, vec![false; cfg.rows], cfg.weight_bits))
    }

    fn build(rows: Vec<u32>, signs: Vec<bool>, columns: u32) -> Self {
        let mut column_masks = [0u64; MAX_COLUMNS];
        for (i, &r) in rows.iter().enumerate() {
            for (c, mask) in column_masks.iter_mut().enumerate().take(columns as usize) {
                if (r >> (columns as usize - 1 - c)) & 1 == 1 {
                    *mask |= 1 << i;
                }
            }
        }
        Self {
            rows,
            signs,
            columns,
            column_masks,
        }
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn columns(&self) -> u32 {
        self.columns
    }

    /// Row value as an unsigned integer.
    pub fn row_value(&self, row: usize) -> u32 {
        self.rows[row]
    }

    pub fn sign(&self, row: usize) -> bool {
        self.signs[row]
    }

    /// Column `col` counted from the MSB.
    pub fn bit(&self, row: usize, col: u32) -> bool {
        (self.rows[row] >> (self.columns - 1 - col)) & 1 == 1
    }

    pub fn row_bits(&self, row: usize) -> Vec<bool> {
        (0..self.columns).map(|c| self.bit(row, c)).collect()
    }

    /// Same array with the MSB (hidden-bit) column cleared, i.e. only the
    /// stored fractions.
    pub fn fraction_only(&self) -> Self {
        let mask = (1u32 << (self.columns - 1)) - 1;
        let rows = self.rows.iter().map(|r| r & mask).collect();
        Self::build(rows, self.signs.clone(), self.columns)
    }

    pub(crate) fn column_masks(&self) -> &[u64] {
        &self.column_masks[..self.columns as usize]
    }
}

/// Writes each weight's significand `1.M` into its row (hidden bit in the
/// MSB column). Subnormal weights store a zero hidden bit.
pub fn store_weights(w: &[FpValue], cfg: &MacroConfig) -> Result<WeightArray> {
    if w.len() > cfg.rows {
        return Err(Error::TooManyRows {
            count: w.len(),
            rows: cfg.rows,
        });
    }
    if let Some(v) = w.first() {
        let needed = v.format().mantissa_bits + 1;
        if needed != cfg.weight_bits {
            return Err(Error::config(format!(
                "{} significands need {needed} columns, array has {}",
                v.format(),
                cfg.weight_bits
            )));
        }
    }
    let mut rows: Vec<u32> = w.iter().map(|v| v.significand() as u32).collect();
    let mut signs: Vec<bool> = w.iter().map(|v| v.sign()).collect();
    rows.resize(cfg.rows, 0);
    signs.resize(cfg.rows, false);
    Ok(WeightArray::build(rows, signs, cfg.weight_bits))
}

/// Two-transistor AND cell: the carry of the half adder, and the 1b x 1b
/// product for the analog path.
#[inline]
pub fn pseudo_and(x_bit: bool, w_bit: bool) -> bool {
    x_bit & w_bit
}

/// Two-transistor XOR cell: the sum bit of the half adder.
#[inline]
pub fn pseudo_xor(x_bit: bool, w_bit: bool) -> bool {
    x_bit ^ w_bit
}

/// Adds two MSB-first bit vectors (right-aligned as integers) one bit
/// position per cycle: each cycle's half adder emits a 2-bit partial sum
/// `(carry, sum)` which a local adder accumulates at that position's weight.
pub fn sub_add_bit_serial(x_bits: &[bool], w_bits: &[bool]) -> u64 {
    let len = x_bits.len().max(w_bits.len());
    assert!(len <= 62, "bit-serial operands wider than the local adder");
    let lsb_first = |bits: &[bool], j: usize| j < bits.len() && bits[bits.len() - 1 - j];
    let mut local_adder = 0u64;
    for j in 0..len {
        let (x, w) = (lsb_first(x_bits, j), lsb_first(w_bits, j));
        let partial = ((pseudo_and(x, w) as u64) << 1) | pseudo_xor(x, w) as u64;
        local_adder += partial << j;
    }
    local_adder
}

/// Per-column count of cells whose AND output is high this cycle:
/// `n_c = sum_i AND(x_i, W_i[c])`, columns MSB first.
pub fn column_counts(wa: &WeightArray, x_cycle_bits: &[bool]) -> Result<Vec<u32>> {
    if x_cycle_bits.len() != wa.row_count() {
        return Err(Error::LengthMismatch {
            left: x_cycle_bits.len(),
            right: wa.row_count(),
        });
    }
    Ok((0..wa.columns())
        .map(|c| {
            x_cycle_bits
                .iter()
                .enumerate()
                .filter(|&(i, &x)| pseudo_and(x, wa.bit(i, c)))
                .count() as u32
        })
        .collect())
}
