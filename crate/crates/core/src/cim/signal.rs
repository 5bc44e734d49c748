//! Analog half of the array: bit-line discharge, switched-capacitor charge
//! sharing, and the flash ADC. Voltages are normalized to `vdd`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::cim::config::MacroConfig;
use crate::error::{Error, Result};

/// Guard for `floor` on a count reconstructed from an exact-in-theory
/// voltage; far below one count, far above f64 round-off.
const CODE_EPSILON: f64 = 1e-9;

/// Computation and compensation capacitances per column (MSB first), in
/// units of the LSB capacitor. Mismatch is drawn once when a macro instance
/// is built.
#[derive(Clone, Debug, PartialEq)]
pub struct Capacitors {
    pub compute: Vec<f64>,
    pub compensation: Vec<f64>,
}

impl Capacitors {
    pub fn nominal(cfg: &MacroConfig) -> Self {
        let by_column = |list: &[u32]| list.iter().rev().map(|&u| u as f64).collect();
        Self {
            compute: by_column(&cfg.cap_units),
            compensation: by_column(&cfg.comp_cap_units),
        }
    }

    /// Nominal values scaled by `1 + N(0, cap_mismatch_sigma)` each.
    pub fn sample<R: Rng + ?Sized>(cfg: &MacroConfig, rng: &mut R) -> Self {
        let mut caps = Self::nominal(cfg);
        if cfg.cap_mismatch_sigma > 0.0 {
            let dist = Normal::new(0.0, cfg.cap_mismatch_sigma).expect("validated sigma");
            for c in caps.compute.iter_mut().chain(caps.compensation.iter_mut()) {
                *c = (*c * (1.0 + dist.sample(rng))).max(0.0);
            }
        }
        caps
    }
}

/// Bit-line voltage after `n` of `rows` cells discharge it:
/// `vdd * (1 - n/rows)` plus Gaussian noise, clamped to `[0, vdd]`.
pub fn gblb_voltage<R: Rng + ?Sized>(n: u32, cfg: &MacroConfig, rng: &mut R) -> f64 {
    let mut v = cfg.vdd * (1.0 - n as f64 / cfg.rows as f64);
    if cfg.noise_sigma > 0.0 {
        v += Normal::new(0.0, cfg.noise_sigma).expect("validated sigma").sample(rng);
    }
    v.clamp(0.0, cfg.vdd)
}

/// Charge-shared output voltage: every computation capacitor holds its
/// column's bit-line voltage, every compensation capacitor stays at `vdd`,
/// and all of them are shorted together.
pub fn charge_share(column_voltages: &[f64], caps: &Capacitors, vdd: f64) -> Result<f64> {
    if column_voltages.len() != caps.compute.len() || caps.compute.len() != caps.compensation.len() {
        return Err(Error::config(format!(
            "{} column voltages for {} computation / {} compensation capacitors",
            column_voltages.len(),
            caps.compute.len(),
            caps.compensation.len()
        )));
    }
    Ok(share(column_voltages, caps, vdd))
}

#[inline]
pub(crate) fn share(column_voltages: &[f64], caps: &Capacitors, vdd: f64) -> f64 {
    let mut charge = 0.0;
    let mut total = 0.0;
    for ((v, c), comp) in column_voltages.iter().zip(&caps.compute).zip(&caps.compensation) {
        charge += c * v + comp * vdd;
        total += c + comp;
    }
    if total == 0.0 {
        vdd
    } else {
        charge / total
    }
}

/// Noise-free shared voltage for weighted count `w_eff = sum_c 2^c n_c`:
/// `vdd * (1 - w_eff / (rows * total_units))`.
pub fn ideal_shared_voltage(w_eff: f64, cfg: &MacroConfig) -> f64 {
    cfg.vdd * (1.0 - w_eff / (cfg.rows as f64 * cfg.total_units() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AdcOutput {
    /// `adc_bits`-wide code.
    pub code: u32,
    /// The ideal `adc_input_bits`-wide code before dropping LSBs.
    pub full_code: u32,
    /// Dequantized weighted count.
    pub s_hat: u64,
    /// The input fell above the top of the ideal code range.
    pub saturated: bool,
}

/// Flash ADC: recovers the weighted count by inverting the noise-free
/// charge-share map, keeps the top `adc_bits` of its `adc_input_bits`-wide
/// code, and dequantizes.
pub fn flash_adc(v_o: f64, cfg: &MacroConfig) -> AdcOutput {
    let span = cfg.rows as f64 * cfg.total_units() as f64;
    let w_hat = (cfg.vdd - v_o) / cfg.vdd * span;
    let top = (1u32 << cfg.adc_input_bits) - 1;
    let raw = (w_hat + CODE_EPSILON).floor();
    let saturated = raw > top as f64;
    let full_code = raw.clamp(0.0, top as f64) as u32;
    let dropped = cfg.adc_dropped_bits();
    let code = full_code >> dropped;
    AdcOutput {
        code,
        full_code,
        s_hat: dequantize(code, cfg),
        saturated,
    }
}

#[inline]
pub(crate) fn dequantize(code: u32, cfg: &MacroConfig) -> u64 {
    let dropped = cfg.adc_dropped_bits();
    let base = (code as u64) << dropped;
    match cfg.adc_reconstruction {
        crate::cim::config::AdcReconstruction::Midpoint if dropped > 0 => base + (1 << (dropped - 1)),
        _ => base,
    }
}

/// The `2^adc_bits - 1` sense-amplifier reference voltages, highest first:
/// threshold `k` sits at the voltage of weighted count `k * 2^dropped`.
pub fn adc_thresholds(cfg: &MacroConfig) -> Vec<f64> {
    let step = 1u64 << cfg.adc_dropped_bits();
    (1..(1u64 << cfg.adc_bits))
        .map(|k| ideal_shared_voltage((k * step) as f64, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    /// `n_c` MSB first -> bit-line voltages through the public model.
    fn voltages(counts: &[u32], cfg: &MacroConfig) -> Vec<f64> {
        counts.iter().map(|&n| gblb_voltage(n, cfg, &mut rng())).collect()
    }

    #[test]
    fn bitline_examples() {
        let cfg = MacroConfig::default();
        assert_eq!(gblb_voltage(0, &cfg, &mut rng()), 1.0);
        assert_eq!(gblb_voltage(4, &cfg, &mut rng()), 0.0);
        assert_eq!(gblb_voltage(1, &cfg, &mut rng()), 0.75);
        let noisy = MacroConfig {
            noise_sigma: 5.0,
            ..cfg
        };
        for n in 0..=4 {
            let v = gblb_voltage(n, &noisy, &mut rng());
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn charge_share_examples() {
        let cfg = MacroConfig::default();
        let caps = Capacitors::nominal(&cfg);
        assert_eq!(caps.compute, vec![8.0, 4.0, 2.0, 1.0]);
        assert_eq!(caps.compensation, vec![0.0, 4.0, 6.0, 7.0]);
        assert_eq!(charge_share(&[1.0; 4], &caps, 1.0).unwrap(), 1.0);
        let v = charge_share(&voltages(&[2, 1, 2, 1], &cfg), &caps, 1.0).unwrap();
        assert_eq!(v, 1.0 - 25.0 / 128.0);
        let v = charge_share(&voltages(&[4, 4, 4, 4], &cfg), &caps, 1.0).unwrap();
        assert_eq!(v, 1.0 - 60.0 / 128.0);
        assert!(charge_share(&[1.0; 3], &caps, 1.0).is_err());
    }

    #[test]
    fn charge_share_is_affine_and_decreasing_in_weighted_count() {
        let cfg = MacroConfig::default();
        let caps = Capacitors::nominal(&cfg);
        // every reachable count vector, grouped by w_eff
        let mut by_weight: Vec<Option<f64>> = vec![None; 61];
        for code in 0..5u32.pow(4) {
            let counts: Vec<u32> = (0..4).map(|c| (code / 5u32.pow(c)) % 5).collect();
            let w_eff: u32 = counts.iter().enumerate().map(|(c, n)| n << (3 - c)).sum();
            let v = charge_share(&voltages(&counts, &cfg), &caps, 1.0).unwrap();
            // exact linear fit: slope -1/128, intercept 1
            assert_eq!(v, 1.0 - w_eff as f64 / 128.0);
            match by_weight[w_eff as usize] {
                Some(prev) => assert_eq!(prev, v),
                None => by_weight[w_eff as usize] = Some(v),
            }
        }
        let reachable: Vec<f64> = by_weight.into_iter().flatten().collect();
        assert!(reachable.windows(2).all(|p| p[1] < p[0]));
    }

    #[test]
    fn adc_examples() {
        let cfg = MacroConfig::default();
        let out = flash_adc(ideal_shared_voltage(0.0, &cfg), &cfg);
        assert_eq!((out.code, out.s_hat), (0, 0));
        let out = flash_adc(ideal_shared_voltage(25.0, &cfg), &cfg);
        assert_eq!((out.full_code, out.code, out.s_hat), (25, 3, 24));
        let out = flash_adc(ideal_shared_voltage(60.0, &cfg), &cfg);
        assert_eq!((out.full_code, out.code, out.s_hat), (60, 7, 56));
        assert!(!out.saturated);
        let ideal = cfg.clone().ideal();
        for w in 0..=63 {
            assert_eq!(flash_adc(ideal_shared_voltage(w as f64, &ideal), &ideal).s_hat, w);
        }
    }

    #[test]
    fn adc_is_monotone_and_bounded_by_truncation() {
        let cfg = MacroConfig::default();
        let mut prev = 0;
        for w in 0..=60u64 {
            let s = flash_adc(ideal_shared_voltage(w as f64, &cfg), &cfg).s_hat;
            assert!(s >= prev);
            assert!(s <= w && w - s <= 7);
            prev = s;
        }
    }

    #[test]
    fn midpoint_reconstruction() {
        let cfg = MacroConfig {
            adc_reconstruction: crate::cim::config::AdcReconstruction::Midpoint,
            ..Default::default()
        };
        assert_eq!(flash_adc(ideal_shared_voltage(25.0, &cfg), &cfg).s_hat, 28);
        assert_eq!(flash_adc(ideal_shared_voltage(0.0, &cfg), &cfg).s_hat, 4);
    }

    #[test]
    fn thresholds_match_comparator_bank() {
        let cfg = MacroConfig::default();
        let th = adc_thresholds(&cfg);
        assert_eq!(th.len(), 7);
        assert_eq!(th[0], 1.0 - 8.0 / 128.0);
        assert_eq!(th[6], 1.0 - 56.0 / 128.0);
        // thermometer code from the comparators equals the floor path on
        // voltages away from the thresholds
        let mut r = rng();
        for _ in 0..10_000 {
            let v: f64 = r.random_range(0.0..1.0);
            if th.iter().any(|t| (t - v).abs() < 1e-6) {
                continue;
            }
            let thermometer = th.iter().filter(|&&t| v <= t).count() as u32;
            assert_eq!(flash_adc(v, &cfg).code, thermometer);
        }
    }

    #[test]
    fn saturation_is_flagged() {
        let cfg = MacroConfig {
            rows: 8,
            ..MacroConfig::default()
        };
        let out = flash_adc(ideal_shared_voltage(100.0, &cfg), &cfg);
        assert!(out.saturated);
        assert_eq!(out.full_code, 63);
    }

    #[test]
    fn mismatch_sampling_is_seeded() {
        let cfg = MacroConfig {
            cap_mismatch_sigma: 0.05,
            ..Default::default()
        };
        let a = Capacitors::sample(&cfg, &mut rng());
        let b = Capacitors::sample(&cfg, &mut rng());
        assert_eq!(a, b);
        assert_ne!(a, Capacitors::nominal(&cfg));
        assert_eq!(a.compensation[0], 0.0);
    }
}
