//! Per-MAC energy breakdown of the mantissa array against an all-digital
//! FP mantissa multiplier, and workload estimates built on it.
//!
//! Entries are kept as exact decimals so totals print exactly as tabulated.
//! Exponent-path energy is not modeled: it is the same in both designs.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::TinyNet;

/// One operation kind's energy in fJ/MAC.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Breakdown {
    pub add_multi: BigRational,
    pub adder_tree: BigRational,
    pub accumulator_adc: BigRational,
    pub register: BigRational,
}

impl Breakdown {
    fn from_millis(parts: [i64; 4]) -> Self {
        let fj = |m: i64| BigRational::new(BigInt::from(m), BigInt::from(1000));
        Self {
            add_multi: fj(parts[0]),
            adder_tree: fj(parts[1]),
            accumulator_adc: fj(parts[2]),
            register: fj(parts[3]),
        }
    }

    pub fn total(&self) -> BigRational {
        &self.add_multi + &self.adder_tree + &self.accumulator_adc + &self.register
    }

    fn fields_mut(&mut self) -> [(&'static str, &mut BigRational); 4] {
        [
            ("add_multi", &mut self.add_multi),
            ("adder_tree", &mut self.adder_tree),
            ("accumulator_adc", &mut self.accumulator_adc),
            ("register", &mut self.register),
        ]
    }

    fn fields(&self) -> [(&'static str, &BigRational); 4] {
        [
            ("add_multi", &self.add_multi),
            ("adder_tree", &self.adder_tree),
            ("accumulator_adc", &self.accumulator_adc),
            ("register", &self.register),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnergyTable {
    pub sub_add: Breakdown,
    pub sub_mul: Breakdown,
    pub baseline: Breakdown,
}

pub fn builtin_table() -> EnergyTable {
    EnergyTable {
        sub_add: Breakdown::from_millis([896, 10_752, 10_752, 6_720]),
        sub_mul: Breakdown::from_millis([1_792, 8_064, 7_040, 5_376]),
        baseline: Breakdown::from_millis([3_584, 34_944, 26_880, 13_440]),
    }
}

/// Parses a plain decimal (`12`, `-0.25`, `1e-3`) into an exact rational.
pub fn parse_decimal(s: &str) -> Result<BigRational> {
    let bad = || Error::config(format!("not a decimal number: {s:?}"));
    let t = s.trim();
    let (mantissa, exp10) = match t.find(['e', 'E']) {
        Some(i) => (&t[..i], t[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (t, 0),
    };
    let (negative, body) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    let digits = format!("{int_part}{frac_part}");
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let n: BigInt = digits.parse().map_err(|_| bad())?;
    let p = exp10 - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut r = if p >= 0 {
        BigRational::from_integer(n * ten.pow(p as u32))
    } else {
        BigRational::new(n, ten.pow((-p) as u32))
    };
    if negative {
        r = -r;
    }
    Ok(r)
}

/// Fixed-point decimal rendering of an exact value.
pub fn format_decimal(r: &BigRational, places: usize) -> String {
    let scale = BigInt::from(10).pow(places as u32);
    let scaled = r * BigRational::from_integer(scale.clone());
    // round half away from zero
    let half = BigRational::new(1.into(), 2.into());
    let rounded = if scaled >= BigRational::zero() {
        (scaled + half).floor()
    } else {
        (scaled - half).ceil()
    }
    .to_integer();
    let negative = rounded < BigInt::zero();
    let digits = rounded.magnitude().to_string();
    let digits = format!("{digits:0>width$}", width = places + 1);
    let (int_part, frac_part) = digits.split_at(digits.len() - places);
    let sign = if negative { "-" } else { "" };
    if places == 0 {
        format!("{sign}{int_part}")
    } else {
        format!("{sign}{int_part}.{frac_part}")
    }
}

impl EnergyTable {
    pub fn hybrid_total(&self) -> BigRational {
        self.sub_add.total() + self.sub_mul.total()
    }

    /// Every entry multiplied by `factor`.
    pub fn scaled(&self, factor: &BigRational) -> Self {
        let mut t = self.clone();
        for kind in [&mut t.sub_add, &mut t.sub_mul, &mut t.baseline] {
            for (_, v) in kind.fields_mut() {
                *v = &*v * factor;
            }
        }
        t
    }

    fn kinds_mut(&mut self) -> [(&'static str, &mut Breakdown); 3] {
        [
            ("sub_add", &mut self.sub_add),
            ("sub_mul", &mut self.sub_mul),
            ("baseline", &mut self.baseline),
        ]
    }

    /// Applies `kind.column = value` lines (`#` comments, blank lines
    /// allowed) on top of this table.
    pub fn with_overrides(mut self, text: &str) -> Result<Self> {
        for (row, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(row + 1, 1, "expected key = value"))?;
            let (kind, column) = key
                .trim()
                .split_once('.')
                .ok_or_else(|| Error::parse(row + 1, 1, format!("expected kind.column, got {:?}", key.trim())))?;
            let value = parse_decimal(value).map_err(|e| Error::parse(row + 1, key.len() + 2, e.to_string()))?;
            if value < BigRational::zero() {
                return Err(Error::parse(row + 1, key.len() + 2, "energies must be non-negative"));
            }
            let slot = self
                .kinds_mut()
                .into_iter()
                .find(|(name, _)| *name == kind)
                .and_then(|(_, b)| b.fields_mut().into_iter().find(|(name, _)| *name == column).map(|(_, v)| v))
                .ok_or_else(|| Error::parse(row + 1, 1, format!("unknown entry {kind}.{column}")))?;
            *slot = value;
        }
        Ok(self)
    }
}

/// `baseline_total / (sub_add_total + sub_mul_total)`.
pub fn efficiency(t: &EnergyTable) -> Result<BigRational> {
    let hybrid = t.hybrid_total();
    if hybrid.is_zero() {
        return Err(Error::DivisionByZero("hybrid energy total is zero"));
    }
    Ok(t.baseline.total() / hybrid)
}

/// Efficiency rendered the way it is usually quoted: two decimals and a
/// multiplication sign.
pub fn format_efficiency(ratio: &BigRational) -> String {
    format!("{}\u{d7}", format_decimal(ratio, 2))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorkloadEnergy {
    pub mac_count: u64,
    pub hybrid_fj: f64,
    pub baseline_fj: f64,
    pub efficiency: f64,
}

pub fn estimate_workload(net: &TinyNet, n_samples: u64, t: &EnergyTable) -> Result<WorkloadEnergy> {
    estimate_macs(net.macs_per_sample() * n_samples, t)
}

pub fn estimate_macs(mac_count: u64, t: &EnergyTable) -> Result<WorkloadEnergy> {
    let macs = BigRational::from_integer(mac_count.into());
    let to_f64 = |r: BigRational| r.to_f64().unwrap_or(f64::NAN);
    Ok(WorkloadEnergy {
        mac_count,
        hybrid_fj: to_f64(&macs * t.hybrid_total()),
        baseline_fj: to_f64(&macs * t.baseline.total()),
        efficiency: to_f64(efficiency(t)?),
    })
}

impl fmt::Display for EnergyTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:>10} {:>11} {:>16} {:>9} {:>9}",
            "fJ/MAC", "add_multi", "adder_tree", "accumulator_adc", "register", "total"
        )?;
        for (name, b) in [("sub_add", &self.sub_add), ("sub_mul", &self.sub_mul), ("baseline", &self.baseline)] {
            let [a, t, c, r] = b.fields().map(|(_, v)| format_decimal(v, 3));
            writeln!(
                f,
                "{name:<10} {a:>10} {t:>11} {c:>16} {r:>9} {:>9}",
                format_decimal(&b.total(), 3)
            )?;
        }
        write!(
            f,
            "{:<10} {:>10} {:>11} {:>16} {:>9} {:>9}",
            "hybrid",
            "",
            "",
            "",
            "",
            format_decimal(&self.hybrid_total(), 3)
        )
    }
}
