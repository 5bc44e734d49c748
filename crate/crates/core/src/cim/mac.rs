//! One macro instance: sampled capacitors, a noise stream, and the
//! bit-serial analog MAC loop.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cim::array::WeightArray;
use crate::cim::config::{MacroConfig, MAX_COLUMNS};
use crate::cim::signal::{flash_adc, gblb_voltage, share, Capacitors};
use crate::error::{Error, Result};
use crate::exponent::AlignedMantissa;

/// Noise stream 0 draws capacitor mismatch, 1 belongs to the root
/// instance, forks start after that.
const MISMATCH_STREAM: u64 = 0;
const ROOT_NOISE_STREAM: u64 = 1;
const FORK_STREAM_BASE: u64 = 2;

/// State of one input-bit cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleTrace {
    pub cycle: u32,
    /// `n_c`, columns MSB first.
    pub column_counts: Vec<u32>,
    pub column_voltages: Vec<f64>,
    pub shared_voltage: f64,
    pub adc_code: u32,
    pub s_hat: u64,
    pub saturated: bool,
}

/// Every cycle of one MAC invocation plus its shifted-and-added result.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnalogTrace {
    /// Row-sized tile of the dot product this invocation served.
    pub tile: usize,
    /// Lanes with a negative product (the array itself is unsigned).
    pub negative_pass: bool,
    pub cycles: Vec<CycleTrace>,
    pub result: u64,
}

impl AnalogTrace {
    pub fn adc_saturations(&self) -> usize {
        self.cycles.iter().filter(|c| c.saturated).count()
    }
}

/// A single macro: fixed capacitor mismatch plus its own noise RNG. Not
/// shared between workers; use [`MacroInstance::fork`] to get independent
/// noise streams over the same silicon.
#[derive(Clone, Debug)]
pub struct MacroInstance {
    cfg: MacroConfig,
    caps: Capacitors,
    rng: ChaCha8Rng,
    pub(crate) record_traces: bool,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl MacroInstance {
    pub fn new(cfg: MacroConfig) -> Result<Self> {
        cfg.validate()?;
        let caps = Capacitors::sample(&cfg, &mut stream_rng(cfg.seed, MISMATCH_STREAM));
        let rng = stream_rng(cfg.seed, ROOT_NOISE_STREAM);
        Ok(Self {
            cfg,
            caps,
            rng,
            record_traces: true,
        })
    }

    /// Same capacitors, independent noise stream `stream`.
    pub fn fork(&self, stream: u64) -> Self {
        Self {
            cfg: self.cfg.clone(),
            caps: self.caps.clone(),
            rng: stream_rng(self.cfg.seed, FORK_STREAM_BASE.wrapping_add(stream)),
            record_traces: self.record_traces,
        }
    }

    /// Disables per-cycle trace capture in hybrid dot products.
    pub fn without_traces(mut self) -> Self {
        self.record_traces = false;
        self
    }

    pub fn config(&self) -> &MacroConfig {
        &self.cfg
    }

    pub fn capacitors(&self) -> &Capacitors {
        &self.caps
    }

    fn check_array(&self, wa: &WeightArray) -> Result<()> {
        if wa.row_count() != self.cfg.rows || wa.columns() != self.cfg.weight_bits {
            return Err(Error::config(format!(
                "{}x{} weight array on a {}x{} macro",
                wa.row_count(),
                wa.columns(),
                self.cfg.rows,
                self.cfg.weight_bits
            )));
        }
        Ok(())
    }

    /// Bit-serial MAC, MSB-first over `input_bits` cycles: per cycle the AND
    /// cells discharge the bit lines, the capacitor bank shares charge, the
    /// ADC converts once, and the digital side shifts and adds. With a
    /// full-resolution ADC and no noise the result is exactly
    /// `sum_i X_i * W_i`.
    pub fn macro_mac(&mut self, wa: &WeightArray, x_rows: &[AlignedMantissa]) -> Result<(u64, AnalogTrace)> {
        self.check_array(wa)?;
        if x_rows.len() > self.cfg.rows {
            return Err(Error::TooManyRows {
                count: x_rows.len(),
                rows: self.cfg.rows,
            });
        }
        if let Some(x) = x_rows.iter().find(|x| x.width() != self.cfg.input_bits) {
            return Err(Error::config(format!(
                "{}-bit input on a {}-bit serial port",
                x.width(),
                self.cfg.input_bits
            )));
        }
        let xs: Vec<u64> = x_rows.iter().map(|x| x.value()).collect();
        let mut cycles = Vec::with_capacity(self.cfg.input_bits as usize);
        let result = self.run_cycles(wa.column_masks(), &xs, Some(&mut cycles));
        Ok((
            result,
            AnalogTrace {
                tile: 0,
                negative_pass: false,
                cycles,
                result,
            },
        ))
    }

    /// Trace-free MAC over raw `input_bits`-wide integers, for sweeps.
    pub fn mac_value(&mut self, wa: &WeightArray, xs: &[u64]) -> u64 {
        debug_assert!(self.check_array(wa).is_ok() && xs.len() <= self.cfg.rows);
        self.run_cycles(wa.column_masks(), xs, None)
    }

    /// Same as [`MacroInstance::mac_value`] with the array given as column
    /// masks, MSB column first (bit `i` of a mask is row `i`).
    pub(crate) fn mac_masks(&mut self, column_masks: &[u64], xs: &[u64]) -> u64 {
        self.run_cycles(column_masks, xs, None)
    }

    fn run_cycles(&mut self, column_masks: &[u64], xs: &[u64], mut trace: Option<&mut Vec<CycleTrace>>) -> u64 {
        let cols = self.cfg.weight_bits as usize;
        let input_bits = self.cfg.input_bits;
        let mut counts = [0u32; MAX_COLUMNS];
        let mut volts = [0f64; MAX_COLUMNS];
        let mut total = 0u64;
        for j in 0..input_bits {
            let bit = input_bits - 1 - j;
            let x_mask = xs
                .iter()
                .enumerate()
                .fold(0u64, |m, (i, x)| m | (((x >> bit) & 1) << i));
            for (n, m) in counts.iter_mut().zip(column_masks) {
                *n = (m & x_mask).count_ones();
            }
            for c in 0..cols {
                volts[c] = gblb_voltage(counts[c], &self.cfg, &mut self.rng);
            }
            let v_o = share(&volts[..cols], &self.caps, self.cfg.vdd);
            let adc = flash_adc(v_o, &self.cfg);
            total += adc.s_hat << bit;
            if let Some(t) = trace.as_deref_mut() {
                t.push(CycleTrace {
                    cycle: j,
                    column_counts: counts[..cols].to_vec(),
                    column_voltages: volts[..cols].to_vec(),
                    shared_voltage: v_o,
                    adc_code: adc.code,
                    s_hat: adc.s_hat,
                    saturated: adc.saturated,
                });
            }
        }
        total
    }
}

/// Nine significant digits, scientific notation.
pub(crate) fn fmt_voltage(v: f64) -> String {
    format!("{v:.8e}")
}

/// One CSV row per cycle: `lane_tile` is the ordinal of the MAC invocation
/// within the dot product; count/voltage columns are named by bit
/// significance, MSB first.
pub fn write_trace_csv<W: Write>(out: &mut W, traces: &[AnalogTrace], weight_bits: u32) -> std::io::Result<()> {
    let sig: Vec<u32> = (0..weight_bits).rev().collect();
    let mut header = vec!["lane_tile".to_string(), "cycle".to_string()];
    header.extend(sig.iter().map(|s| format!("n_c{s}")));
    header.extend(sig.iter().map(|s| format!("v_c{s}")));
    header.extend(["v_o", "adc_code", "s_hat"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    for (k, t) in traces.iter().enumerate() {
        for c in &t.cycles {
            let mut row = vec![k.to_string(), c.cycle.to_string()];
            row.extend(c.column_counts.iter().map(|n| n.to_string()));
            row.extend(c.column_voltages.iter().map(|&v| fmt_voltage(v)));
            row.push(fmt_voltage(c.shared_voltage));
            row.push(c.adc_code.to_string());
            row.push(c.s_hat.to_string());
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}
