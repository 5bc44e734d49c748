//! Run configuration: macro parameters plus per-command options, read from a
//! flat `key = value` file and overridden by flags.

use std::path::PathBuf;

use fpcim_core::cim::{AdcReconstruction, MacroConfig};
use fpcim_core::{Error, FpFormat, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub macro_cfg: MacroConfig,
    /// `input_bits` was given explicitly (the sweep otherwise uses 4).
    pub input_bits_set: bool,
    pub ideal_adc: bool,
    pub format: FpFormat,
    pub out_format: FpFormat,
    pub samples: u64,
    pub max_cases: u64,
    pub allow_sampling: bool,
    pub pairs: bool,
    pub weights: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub energy_table: Option<PathBuf>,
    pub energy_scale: String,
    pub workload_samples: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            macro_cfg: MacroConfig::default(),
            input_bits_set: false,
            ideal_adc: false,
            format: FpFormat::E4M3,
            out_format: FpFormat::FP16,
            samples: 1_000_000,
            max_cases: 1 << 28,
            allow_sampling: false,
            pairs: false,
            weights: None,
            data: None,
            energy_table: None,
            energy_scale: "1".into(),
            workload_samples: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<u32>> {
    value
        .split(',')
        .map(|v| parse::<u32>(key, v.trim()))
        .collect()
}

fn join(list: &[u32]) -> String {
    list.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let m = &mut self.macro_cfg;
        match key {
            "rows" => m.rows = parse(key, value)?,
            "weight_bits" => *m = m.clone().with_weight_bits(parse(key, value)?),
            "input_bits" => {
                m.input_bits = parse(key, value)?;
                self.input_bits_set = true;
            }
            "cap_units" => m.cap_units = parse_list(key, value)?,
            "comp_cap_units" => m.comp_cap_units = parse_list(key, value)?,
            "total_units_per_column" => m.total_units_per_column = parse(key, value)?,
            "vdd" => m.vdd = parse(key, value)?,
            "adc_bits" => m.adc_bits = parse(key, value)?,
            "adc_input_bits" => m.adc_input_bits = parse(key, value)?,
            "adc_reconstruction" => m.adc_reconstruction = value.parse::<AdcReconstruction>()?,
            "noise_sigma" => m.noise_sigma = parse(key, value)?,
            "cap_mismatch_sigma" => m.cap_mismatch_sigma = parse(key, value)?,
            "acc_bits" => m.acc_bits = parse(key, value)?,
            "seed" => m.seed = parse(key, value)?,
            "ideal_adc" => self.ideal_adc = parse(key, value)?,
            "format" => self.format = value.parse()?,
            "out_format" => self.out_format = value.parse()?,
            "samples" => self.samples = parse(key, value)?,
            "max_cases" => self.max_cases = parse(key, value)?,
            "allow_sampling" => self.allow_sampling = parse(key, value)?,
            "pairs" => self.pairs = parse(key, value)?,
            "weights" => self.weights = Some(value.into()),
            "data" => self.data = Some(value.into()),
            "energy_table" => self.energy_table = Some(value.into()),
            "energy_scale" => {
                fpcim_core::energy::parse_decimal(value)?;
                self.energy_scale = value.into();
            }
            "workload_samples" => self.workload_samples = Some(parse(key, value)?),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Macro parameters as used by a command, after `ideal_adc`.
    pub fn effective_macro(&self) -> Result<MacroConfig> {
        let cfg = if self.ideal_adc {
            self.macro_cfg.clone().ideal()
        } else {
            self.macro_cfg.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key in a fixed order, in the same syntax [`RunConfig::set`]
    /// accepts. Feeding these lines back reproduces this configuration.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.macro_cfg;
        let mut e = vec![
            ("rows", m.rows.to_string()),
            ("weight_bits", m.weight_bits.to_string()),
            ("input_bits", m.input_bits.to_string()),
            ("cap_units", join(&m.cap_units)),
            ("comp_cap_units", join(&m.comp_cap_units)),
            ("total_units_per_column", m.total_units_per_column.to_string()),
            ("vdd", m.vdd.to_string()),
            ("adc_bits", m.adc_bits.to_string()),
            ("adc_input_bits", m.adc_input_bits.to_string()),
            ("adc_reconstruction", m.adc_reconstruction.to_string()),
            ("noise_sigma", m.noise_sigma.to_string()),
            ("cap_mismatch_sigma", m.cap_mismatch_sigma.to_string()),
            ("acc_bits", m.acc_bits.to_string()),
            ("seed", m.seed.to_string()),
            ("ideal_adc", self.ideal_adc.to_string()),
            ("format", self.format.name()),
            ("out_format", self.out_format.name()),
            ("samples", self.samples.to_string()),
            ("max_cases", self.max_cases.to_string()),
            ("allow_sampling", self.allow_sampling.to_string()),
            ("pairs", self.pairs.to_string()),
            ("energy_scale", self.energy_scale.clone()),
        ];
        let paths = [
            ("weights", &self.weights),
            ("data", &self.data),
            ("energy_table", &self.energy_table),
        ];
        for (k, p) in paths {
            if let Some(p) = p {
                e.push((k, p.display().to_string()));
            }
        }
        if let Some(n) = self.workload_samples {
            e.push(("workload_samples", n.to_string()));
        }
        e
    }

    /// Config file text. `input_bits` is written only when it was set, so
    /// reading the text back leaves command-specific defaults in place.
    pub fn to_text(&self) -> String {
        self.entries()
            .iter()
            .filter(|(k, _)| *k != "input_bits" || self.input_bits_set)
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.entries()
                .into_iter()
                .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# sweep\nseed = 7\nnoise_sigma=0.01\nweight_bits=5\ndata=x.csv\n").unwrap();
        assert_eq!(cfg.macro_cfg.cap_units, vec![1, 2, 4, 8, 16]);
        let mut again = RunConfig::default();
        again.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);

        cfg.set("input_bits", "6").unwrap();
        let mut again = RunConfig::default();
        again.apply_text(&cfg.to_text()).unwrap();
        assert_eq!((again.macro_cfg.input_bits, again.input_bits_set), (6, true));
    }

    #[test]
    fn bad_lines_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_text("seed 7").is_err());
        assert!(cfg.apply_text("colour = red").is_err());
        assert!(cfg.apply_text("rows = four").is_err());
        assert!(cfg.apply_text("adc_reconstruction = round").is_err());
    }

    #[test]
    fn ideal_flag_applies_on_top() {
        let mut cfg = RunConfig::default();
        cfg.set("noise_sigma", "0.2").unwrap();
        cfg.set("ideal_adc", "true").unwrap();
        let m = cfg.effective_macro().unwrap();
        assert_eq!((m.adc_bits, m.noise_sigma), (6, 0.0));
        cfg.set("adc_bits", "9").unwrap();
        cfg.set("ideal_adc", "false").unwrap();
        assert!(cfg.effective_macro().is_err());
    }
}
