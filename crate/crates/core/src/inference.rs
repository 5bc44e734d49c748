//! Small dense classifiers evaluated either with exact FP arithmetic or
//! with every dot product routed through the hybrid macro.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cim::{DotFlags, MacroConfig, MacroInstance};
use crate::error::{Error, Result};
use crate::exact::ExactReal;
use crate::fp::{decode, encode, encode_f64, fp_dot_exact, FpFormat, FpValue};
use crate::parallel::Execution;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<FpValue>,
    pub bias: Vec<ExactReal>,
}

impl Layer {
    pub fn row(&self, o: usize) -> &[FpValue] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TinyNet {
    pub weight_format: FpFormat,
    /// Format hidden activations are rounded to.
    pub activation_format: FpFormat,
    /// Format of the final layer's outputs.
    pub logit_format: FpFormat,
    pub layers: Vec<Layer>,
}

fn default_fp8() -> String {
    "E4M3".into()
}

fn default_logits() -> String {
    "FP16".into()
}

#[derive(Serialize, Deserialize)]
struct NetFile {
    #[serde(default = "default_fp8")]
    weight_format: String,
    #[serde(default = "default_fp8")]
    activation_format: String,
    #[serde(default = "default_logits")]
    logit_format: String,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    /// `[sign, stored_exponent, mantissa]` per weight.
    weights: Vec<[u32; 3]>,
    bias: Vec<String>,
}

impl TinyNet {
    pub fn new(
        weight_format: FpFormat,
        activation_format: FpFormat,
        logit_format: FpFormat,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("network has no layers".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::Dimension(format!(
                    "layer {k}: {} weights and {} biases for {}x{}",
                    l.weights.len(),
                    l.bias.len(),
                    l.out_dim,
                    l.in_dim
                )));
            }
            if let Some(prev) = k.checked_sub(1).map(|p| &layers[p]) {
                if prev.out_dim != l.in_dim {
                    return Err(Error::Dimension(format!(
                        "layer {k} expects {} inputs, previous layer gives {}",
                        l.in_dim, prev.out_dim
                    )));
                }
            }
            if l.weights.iter().any(|w| w.format() != weight_format) {
                return Err(Error::Dimension(format!("layer {k} has weights outside {weight_format}")));
            }
        }
        Ok(Self {
            weight_format,
            activation_format,
            logit_format,
            layers,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetFile = serde_json::from_str(text)?;
        let weight_format: FpFormat = file.weight_format.parse()?;
        let layers = file
            .layers
            .into_iter()
            .map(|l| {
                let weights = l
                    .weights
                    .iter()
                    .map(|&[s, e, m]| FpValue::new(s != 0, e, m, weight_format))
                    .collect::<Result<Vec<_>>>()?;
                let bias = l
                    .bias
                    .iter()
                    .map(|b| ExactReal::from_decimal_str(b))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Layer {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    activation: l.activation,
                    weights,
                    bias,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            weight_format,
            file.activation_format.parse()?,
            file.logit_format.parse()?,
            layers,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = NetFile {
            weight_format: self.weight_format.name(),
            activation_format: self.activation_format.name(),
            logit_format: self.logit_format.name(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    activation: l.activation,
                    weights: l
                        .weights
                        .iter()
                        .map(|w| [w.sign() as u32, w.stored_exponent(), w.mantissa()])
                        .collect(),
                    bias: l.bias.iter().map(|b| b.to_string()).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn macs_per_sample(&self) -> u64 {
        self.layers.iter().map(|l| (l.in_dim * l.out_dim) as u64).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<FpValue>>,
    pub labels: Vec<usize>,
    /// Factor applied to every raw feature before rounding.
    pub scale: f64,
}

/// Parses `label,feature,...` rows. Blank lines and `#` lines are skipped.
/// When the largest feature magnitude exceeds the format's largest finite
/// value, every feature is scaled by `max_finite / max|x|`; values are
/// then rounded to nearest-even in `fmt`.
pub fn parse_dataset<R: BufRead>(input: R, fmt: FpFormat) -> Result<Dataset> {
    let mut raw: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let row = i + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut fields = t.split(',');
        let label = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::parse(row, 1, format!("label: {e}")))?;
        let feats = fields
            .enumerate()
            .map(|(c, f)| {
                let v = f
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(row, c + 2, e.to_string()))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::parse(row, c + 2, "feature must be finite"))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if feats.is_empty() {
            return Err(Error::parse(row, 2, "row has no features"));
        }
        if let Some(first) = raw.first() {
            if first.len() != feats.len() {
                return Err(Error::Dimension(format!(
                    "row {row} has {} features, expected {}",
                    feats.len(),
                    first.len()
                )));
            }
        }
        raw.push(feats);
        labels.push(label);
    }
    if raw.is_empty() {
        return Err(Error::parse(1, 1, "dataset is empty"));
    }
    let peak = raw.iter().flatten().fold(0f64, |m, v| m.max(v.abs()));
    let limit = fmt.max_finite().to_f64();
    let scale = if peak > limit { limit / peak } else { 1.0 };
    let features = raw
        .iter()
        .map(|r| r.iter().map(|v| encode_f64(v * scale, fmt)).collect())
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        features,
        labels,
        scale,
    })
}

pub fn load_dataset(path: &Path, fmt: FpFormat) -> Result<Dataset> {
    parse_dataset(std::io::BufReader::new(std::fs::File::open(path)?), fmt)
}

/// Writes the encoded features back out exactly, in the same layout.
pub fn write_dataset<W: Write>(out: &mut W, ds: &Dataset) -> std::io::Result<()> {
    for (label, feats) in ds.labels.iter().zip(&ds.features) {
        let cols: Vec<String> = feats.iter().map(|v| decode(v).to_string()).collect();
        writeln!(out, "{label},{}", cols.join(","))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Hybrid,
}

pub enum Backend<'a> {
    Exact,
    Hybrid(&'a mut MacroInstance),
}

/// Flags summed over every dot product of one or more forward passes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RunFlags {
    pub sticky_lanes: u64,
    pub subnormals_flushed: u64,
    pub adc_saturations: u64,
    pub accumulator_saturations: u64,
    pub bias_truncations: u64,
    /// Outputs clamped to the largest finite value of their format.
    pub output_saturations: u64,
}

impl RunFlags {
    fn absorb(&mut self, f: &DotFlags) {
        self.sticky_lanes += f.sticky_lanes as u64;
        self.subnormals_flushed += f.subnormals_flushed as u64;
        self.adc_saturations += f.adc_saturations as u64;
        self.accumulator_saturations += f.accumulator_saturated as u64;
        self.bias_truncations += f.bias_truncated as u64;
    }

    fn merge(&mut self, o: &RunFlags) {
        self.sticky_lanes += o.sticky_lanes;
        self.subnormals_flushed += o.subnormals_flushed;
        self.adc_saturations += o.adc_saturations;
        self.accumulator_saturations += o.accumulator_saturations;
        self.bias_truncations += o.bias_truncations;
        self.output_saturations += o.output_saturations;
    }
}

/// Rounds to `fmt`, clamping out-of-range values to the largest finite
/// magnitude.
fn encode_saturating(x: &ExactReal, fmt: FpFormat, flags: &mut RunFlags) -> Result<FpValue> {
    match encode(x, fmt) {
        Err(Error::Overflow { .. }) => {
            flags.output_saturations += 1;
            let max = fmt.max_finite();
            Ok(if x.is_negative() { max.neg() } else { max })
        }
        other => other,
    }
}

/// One forward pass; returns the final layer's outputs.
pub fn forward(net: &TinyNet, x: &[FpValue], backend: &mut Backend<'_>, flags: &mut RunFlags) -> Result<Vec<FpValue>> {
    if x.len() != net.input_dim() {
        return Err(Error::Dimension(format!(
            "input has {} features, network expects {}",
            x.len(),
            net.input_dim()
        )));
    }
    let mut act = x.to_vec();
    let last = net.layers.len() - 1;
    for (k, layer) in net.layers.iter().enumerate() {
        let fmt = if k == last {
            net.logit_format
        } else {
            net.activation_format
        };
        let mut next = Vec::with_capacity(layer.out_dim);
        for o in 0..layer.out_dim {
            let w = layer.row(o);
            let b = &layer.bias[o];
            let total = match backend {
                Backend::Exact => &fp_dot_exact(w, &act)? + b,
                Backend::Hybrid(m) => {
                    let (total, f) = m.hybrid_fp_dot_total(w, &act, Some(b))?;
                    flags.absorb(&f);
                    total
                }
            };
            let mut v = encode_saturating(&total, fmt, flags)?;
            if layer.activation == Activation::Relu && v.sign() {
                v = FpValue::zero(fmt);
            }
            next.push(v);
        }
        act = next;
    }
    Ok(act)
}

/// Index of the largest output; ties go to the lowest index.
pub fn argmax(outputs: &[FpValue]) -> usize {
    let mut best = 0;
    for (i, v) in outputs.iter().enumerate() {
        if v.to_f64() > outputs[best].to_f64() {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub mode: Mode,
    pub predictions: Vec<usize>,
    pub accuracy: f64,
    pub flags: RunFlags,
}

fn check_labels(net: &TinyNet, ds: &Dataset) -> Result<()> {
    if ds.features.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(l) = ds.labels.iter().find(|&&l| l >= net.classes()) {
        return Err(Error::Dimension(format!("label {l} but the network has {} classes", net.classes())));
    }
    Ok(())
}

/// Top-1 accuracy over the dataset. In hybrid mode sample `i` runs on a
/// macro with noise stream `i`, so results do not depend on scheduling.
pub fn evaluate(net: &TinyNet, ds: &Dataset, mode: Mode, cfg: &MacroConfig, execution: Execution) -> Result<Evaluation> {
    check_labels(net, ds)?;
    let root = match mode {
        Mode::Exact => None,
        Mode::Hybrid => Some(MacroInstance::new(cfg.clone())?.without_traces()),
    };
    let per_sample = execution.map(ds.features.len(), |i| {
        let mut flags = RunFlags::default();
        let outputs = match &root {
            None => forward(net, &ds.features[i], &mut Backend::Exact, &mut flags)?,
            Some(r) => {
                let mut m = r.fork(i as u64);
                forward(net, &ds.features[i], &mut Backend::Hybrid(&mut m), &mut flags)?
            }
        };
        Ok((argmax(&outputs), flags))
    })?;
    let mut flags = RunFlags::default();
    let mut predictions = Vec::with_capacity(per_sample.len());
    for (p, f) in per_sample {
        predictions.push(p);
        flags.merge(&f);
    }
    let correct = predictions.iter().zip(&ds.labels).filter(|(p, l)| p == l).count();
    Ok(Evaluation {
        mode,
        accuracy: correct as f64 / ds.labels.len() as f64,
        predictions,
        flags,
    })
}

/// `matrix[true][predicted]`.
pub fn confusion(predictions: &[usize], labels: &[usize], classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        m[l][p] += 1;
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub samples: usize,
    pub classes: usize,
    pub baseline_accuracy: f64,
    pub hybrid_accuracy: f64,
    /// `hybrid - baseline`, in accuracy fraction.
    pub delta: f64,
    /// Samples whose predicted class differs between the two modes.
    pub prediction_mismatches: usize,
    pub hybrid_flags: RunFlags,
    pub baseline_confusion: Vec<Vec<u64>>,
    pub hybrid_confusion: Vec<Vec<u64>>,
}

pub fn compare_report(net: &TinyNet, ds: &Dataset, cfg: &MacroConfig, execution: Execution) -> Result<CompareReport> {
    let base = evaluate(net, ds, Mode::Exact, cfg, execution)?;
    let hybrid = evaluate(net, ds, Mode::Hybrid, cfg, execution)?;
    let classes = net.classes();
    Ok(CompareReport {
        samples: ds.labels.len(),
        classes,
        baseline_accuracy: base.accuracy,
        hybrid_accuracy: hybrid.accuracy,
        delta: hybrid.accuracy - base.accuracy,
        prediction_mismatches: base
            .predictions
            .iter()
            .zip(&hybrid.predictions)
            .filter(|(a, b)| a != b)
            .count(),
        hybrid_flags: hybrid.flags,
        baseline_confusion: confusion(&base.predictions, &ds.labels, classes),
        hybrid_confusion: confusion(&hybrid.predictions, &ds.labels, classes),
    })
}

/// `mode,true_label,predicted,count`, one row per nonzero cell.
pub fn write_confusion_csv<W: Write>(out: &mut W, report: &CompareReport) -> std::io::Result<()> {
    writeln!(out, "mode,true_label,predicted,count")?;
    for (mode, m) in [("exact", &report.baseline_confusion), ("hybrid", &report.hybrid_confusion)] {
        for (t, row) in m.iter().enumerate() {
            for (p, &n) in row.iter().enumerate().filter(|(_, n)| **n > 0) {
                writeln!(out, "{mode},{t},{p},{n}")?;
            }
        }
    }
    Ok(())
}
