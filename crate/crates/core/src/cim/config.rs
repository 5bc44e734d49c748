use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a truncated ADC code is mapped back to a weighted count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdcReconstruction {
    /// `code << dropped_bits`; maps zero to zero, never overshoots.
    #[default]
    Truncate,
    /// Centre of the code's bin; halves the worst-case error but biases zero.
    Midpoint,
}

impl std::str::FromStr for AdcReconstruction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truncate" => Ok(Self::Truncate),
            "midpoint" => Ok(Self::Midpoint),
            _ => Err(Error::config(format!("unknown ADC reconstruction {s:?}"))),
        }
    }
}

impl std::fmt::Display for AdcReconstruction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Truncate => "truncate",
            Self::Midpoint => "midpoint",
        })
    }
}

/// Geometry and analog parameters of one mantissa MAC array.
///
/// Capacitor lists are indexed by bit significance (LSB first); everything
/// else in the array model indexes columns MSB first, matching how weight
/// bits are laid out along a row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroConfig {
    pub rows: usize,
    pub weight_bits: u32,
    /// Bit-serial input width; also the alignment register width.
    pub input_bits: u32,
    pub cap_units: Vec<u32>,
    pub comp_cap_units: Vec<u32>,
    pub total_units_per_column: u32,
    pub vdd: f64,
    pub adc_bits: u32,
    pub adc_input_bits: u32,
    pub adc_reconstruction: AdcReconstruction,
    pub noise_sigma: f64,
    pub cap_mismatch_sigma: f64,
    /// Signed fixed-point accumulator width of the digital back end.
    pub acc_bits: u32,
    pub seed: u64,
}

pub(crate) const MAX_COLUMNS: usize = 16;
pub(crate) const MAX_ROWS: usize = 64;

impl Default for MacroConfig {
    fn default() -> Self {
        Self {
            rows: 4,
            weight_bits: 4,
            input_bits: 8,
            cap_units: vec![1, 2, 4, 8],
            comp_cap_units: vec![7, 6, 4, 0],
            total_units_per_column: 8,
            vdd: 1.0,
            adc_bits: 3,
            adc_input_bits: 6,
            adc_reconstruction: AdcReconstruction::Truncate,
            noise_sigma: 0.0,
            cap_mismatch_sigma: 0.0,
            acc_bits: 32,
            seed: 0,
        }
    }
}

impl MacroConfig {
    /// Full-resolution ADC, no noise, no mismatch.
    pub fn ideal(mut self) -> Self {
        self.adc_bits = self.adc_input_bits;
        self.noise_sigma = 0.0;
        self.cap_mismatch_sigma = 0.0;
        self
    }

    /// Rebuilds the binary-weighted capacitor lists for a new column count,
    /// keeping each column's total at the smallest power of two that holds
    /// the MSB capacitor.
    pub fn with_weight_bits(mut self, weight_bits: u32) -> Self {
        self.weight_bits = weight_bits;
        self.total_units_per_column = 1 << weight_bits.saturating_sub(1);
        self.cap_units = (0..weight_bits).map(|c| 1 << c).collect();
        self.comp_cap_units = self
            .cap_units
            .iter()
            .map(|c| self.total_units_per_column - c)
            .collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.rows == 0 || self.rows > MAX_ROWS {
            return bad(format!("rows must be in 1..={MAX_ROWS}, got {}", self.rows));
        }
        if self.weight_bits == 0 || self.weight_bits as usize > MAX_COLUMNS {
            return bad(format!("weight_bits must be in 1..={MAX_COLUMNS}, got {}", self.weight_bits));
        }
        if self.input_bits == 0 || self.input_bits > 32 {
            return bad(format!("input_bits must be in 1..=32, got {}", self.input_bits));
        }
        let n = self.weight_bits as usize;
        if self.cap_units.len() != n || self.comp_cap_units.len() != n {
            return bad(format!(
                "capacitor lists need {n} entries, got {} and {}",
                self.cap_units.len(),
                self.comp_cap_units.len()
            ));
        }
        for (c, (&cap, &comp)) in self.cap_units.iter().zip(&self.comp_cap_units).enumerate() {
            if cap != 1 << c {
                return bad(format!("cap_units[{c}] must be {}, got {cap}", 1u32 << c));
            }
            if cap + comp != self.total_units_per_column {
                return bad(format!(
                    "column {c}: {cap} + {comp} units != total {}",
                    self.total_units_per_column
                ));
            }
        }
        if !(self.vdd.is_finite() && self.vdd > 0.0) {
            return bad(format!("vdd must be positive, got {}", self.vdd));
        }
        if self.adc_bits == 0 || self.adc_bits > self.adc_input_bits || self.adc_input_bits > 24 {
            return bad(format!(
                "need 1 <= adc_bits ({}) <= adc_input_bits ({}) <= 24",
                self.adc_bits, self.adc_input_bits
            ));
        }
        for (name, v) in [("noise_sigma", self.noise_sigma), ("cap_mismatch_sigma", self.cap_mismatch_sigma)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if !(8..=62).contains(&self.acc_bits) {
            return bad(format!("acc_bits must be in 8..=62, got {}", self.acc_bits));
        }
        Ok(())
    }

    /// Total capacitance units across all columns (computation + compensation).
    pub fn total_units(&self) -> u32 {
        self.total_units_per_column * self.weight_bits
    }

    /// Largest per-cycle weighted count the array can produce.
    pub fn max_weighted_count(&self) -> u64 {
        self.rows as u64 * ((1u64 << self.weight_bits) - 1)
    }

    /// Largest integer MAC result: `rows * (2^Bw - 1) * (2^Bx - 1)`.
    pub fn full_scale(&self) -> u64 {
        self.max_weighted_count() * ((1u64 << self.input_bits) - 1)
    }

    /// Bits the ADC drops from the ideal code.
    pub fn adc_dropped_bits(&self) -> u32 {
        self.adc_input_bits - self.adc_bits
    }

    /// Lower 16 hex digits of SHA-256 over the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
