//! Error characterization of the quantized macro against exact oracles.
//!
//! Two maps are provided. The integer map compares the macro's MAC result
//! with `sum_i X_i * W_i` over every array configuration (or a random
//! sample of them). The pair map pushes every pair of normal FP operands
//! through a single-lane hybrid product and compares it with the exact
//! product.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cim::{MacroConfig, MacroInstance};
use crate::decomposition::{rational, relative_error};
use crate::error::{Error, Result};
use crate::fp::{fp_mul_exact, FpFormat, FpValue};
use crate::parallel::Execution;

/// Fixed-width histogram; bucket `k` covers `[k * width, (k + 1) * width)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub width: f64,
    pub buckets: BTreeMap<i64, u64>,
}

impl Histogram {
    pub fn new(width: f64) -> Self {
        Self {
            width,
            buckets: BTreeMap::new(),
        }
    }

    pub fn mass(&self) -> u64 {
        self.buckets.values().sum()
    }

    fn add(&mut self, value: f64, weight: u64) {
        let k = (value / self.width).floor() as i64;
        *self.buckets.entry(k).or_default() += weight;
    }

    fn merge(&mut self, other: &Histogram) {
        for (k, n) in &other.buckets {
            *self.buckets.entry(*k).or_default() += n;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    /// Number of cases (with symmetry weights applied).
    pub count: u64,
    pub max_abs: f64,
    pub max_rel_fullscale: f64,
    pub mean: f64,
    pub rms: f64,
    pub histogram: Histogram,
    pub fingerprint: String,
}

/// Exact running totals for integer-valued errors. Merging is
/// associative and commutative, so shard order does not matter.
#[derive(Clone, Debug, Default)]
struct IntTally {
    count: u64,
    sum: i128,
    sum_sq: u128,
    max_abs: u64,
    overshoots: u64,
    buckets: BTreeMap<i64, u64>,
    worst: Option<(u64, Vec<(u32, u64)>)>,
}

impl IntTally {
    fn add(&mut self, error: i64, weight: u64, case: impl FnOnce() -> Vec<(u32, u64)>) {
        self.count += weight;
        self.sum += error as i128 * weight as i128;
        self.sum_sq += (error as i128 * error as i128) as u128 * weight as u128;
        if error > 0 {
            self.overshoots += weight;
        }
        *self.buckets.entry(error).or_default() += weight;
        let abs = error.unsigned_abs();
        if abs > self.max_abs || self.worst.is_none() {
            self.max_abs = abs;
            self.worst = Some((abs, case()));
        }
    }

    fn merge(&mut self, other: IntTally) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.overshoots += other.overshoots;
        for (k, n) in other.buckets {
            *self.buckets.entry(k).or_default() += n;
        }
        // ties keep the earlier shard's case
        if let Some(w) = other.worst {
            if self.worst.as_ref().is_none_or(|mine| w.0 > mine.0) {
                self.max_abs = w.0;
                self.worst = Some(w);
            }
        }
    }

    fn stats(&self, full_scale: u64, fingerprint: String) -> ErrorStats {
        let n = self.count.max(1) as f64;
        ErrorStats {
            count: self.count,
            max_abs: self.max_abs as f64,
            max_rel_fullscale: self.max_abs as f64 / full_scale as f64,
            mean: self.sum as f64 / n,
            rms: (self.sum_sq as f64 / n).sqrt(),
            histogram: Histogram {
                width: 1.0,
                buckets: self.buckets.clone(),
            },
            fingerprint,
        }
    }
}

/// One row of the single-row product table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PointError {
    pub weight: u32,
    pub input: u64,
    pub oracle: u64,
    pub mac: u64,
    pub error: i64,
}

/// The largest-magnitude error found and the array contents that caused
/// it, as `(weight, input)` per row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WorstCase {
    pub error: u64,
    pub rows: Vec<(u32, u64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MacErrorMap {
    /// Every array configuration, when the space fits under the cap.
    pub exhaustive: Option<ErrorStats>,
    pub sampled: Option<ErrorStats>,
    pub single_row: Vec<PointError>,
    pub worst_case: Option<WorstCase>,
    /// Cases where the macro result exceeded the oracle.
    pub overshoots: u64,
    pub full_scale: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepOptions {
    /// Largest number of distinct (symmetry-reduced) cases to enumerate.
    pub max_cases: u64,
    /// Random full-array samples drawn in addition to (or instead of) the
    /// exhaustive sweep.
    pub samples: u64,
    /// Fall back to sampling alone when the space exceeds `max_cases`.
    pub allow_sampling: bool,
    pub execution: Execution,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            max_cases: 1 << 28,
            samples: 1_000_000,
            allow_sampling: false,
            execution: Execution::default(),
        }
    }
}

const SAMPLE_CHUNK: u64 = 1 << 16;

/// Number of multisets of size `k` drawn from `n` kinds, or `None` past
/// `u128`.
fn multisets(n: u64, k: u64) -> Option<u128> {
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n + i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Row contents packed as `(weight << input_bits) | input`.
struct CaseCodec {
    input_bits: u32,
    weight_bits: u32,
}

impl CaseCodec {
    fn split(&self, pair: u32) -> (u32, u64) {
        (pair >> self.input_bits, (pair & ((1 << self.input_bits) - 1)) as u64)
    }

    /// Column masks (MSB column first), inputs, and the integer oracle.
    fn load(&self, pairs: &[u32], masks: &mut [u64], xs: &mut [u64]) -> u64 {
        masks.iter_mut().for_each(|m| *m = 0);
        let mut oracle = 0;
        for (i, &p) in pairs.iter().enumerate() {
            let (w, x) = self.split(p);
            for (c, m) in masks.iter_mut().enumerate() {
                *m |= (((w >> (self.weight_bits as usize - 1 - c)) & 1) as u64) << i;
            }
            xs[i] = x;
            oracle += w as u64 * x;
        }
        oracle
    }
}

/// Permutations of a sorted row multiset.
fn multiplicity(sorted: &[u32], factorial: &[u64]) -> u64 {
    let mut m = factorial[sorted.len()];
    let mut run = 1;
    for i in 1..=sorted.len() {
        if i < sorted.len() && sorted[i] == sorted[i - 1] {
            run += 1;
        } else {
            m /= factorial[run];
            run = 1;
        }
    }
    m
}

/// Integer MAC error map. The exhaustive part enumerates row contents as
/// multisets (the array is invariant under row permutation) and weights
/// each by its number of orderings, so its statistics equal those of the
/// full ordered space.
pub fn exhaustive_mac_error_map(cfg: &MacroConfig, opts: &SweepOptions) -> Result<MacErrorMap> {
    let root = MacroInstance::new(cfg.clone())?;
    let rows = cfg.rows;
    let codec = CaseCodec {
        input_bits: cfg.input_bits,
        weight_bits: cfg.weight_bits,
    };
    let pair_bits = cfg.weight_bits + cfg.input_bits;
    if pair_bits > 31 {
        return Err(Error::SpaceTooLarge {
            cases: u128::MAX,
            cap: opts.max_cases,
        });
    }
    let kinds = 1u64 << pair_bits;
    let cases = multisets(kinds, rows as u64).unwrap_or(u128::MAX);
    let fits = cases <= opts.max_cases as u128;
    if !fits && !opts.allow_sampling {
        return Err(Error::SpaceTooLarge {
            cases,
            cap: opts.max_cases,
        });
    }
    let fingerprint = cfg.fingerprint();
    let full_scale = cfg.full_scale();
    let mut overshoots = 0;
    let mut worst: Option<WorstCase> = None;
    let mut note_worst = |t: &IntTally| {
        if let Some((e, rows)) = &t.worst {
            if worst.as_ref().is_none_or(|w| *e > w.error) {
                worst = Some(WorstCase {
                    error: *e,
                    rows: rows.clone(),
                });
            }
        }
    };

    let exhaustive = if fits {
        let factorial: Vec<u64> = (0..=rows as u64).scan(1u64, |f, i| {
            *f *= i.max(1);
            Some(*f)
        })
        .collect();
        let shards = opts.execution.map(kinds as usize, |first| {
            let mut m = root.fork(first as u64);
            let mut tally = IntTally::default();
            let mut masks = vec![0u64; cfg.weight_bits as usize];
            let mut xs = vec![0u64; rows];
            let mut idx = vec![first as u32; rows];
            let top = (kinds - 1) as u32;
            loop {
                let oracle = codec.load(&idx, &mut masks, &mut xs);
                let mac = m.mac_masks(&masks, &xs);
                let error = mac as i64 - oracle as i64;
                tally.add(error, multiplicity(&idx, &factorial), || idx.iter().map(|&p| codec.split(p)).collect());
                // next non-decreasing tuple with idx[0] fixed
                let Some(pos) = (1..rows).rev().find(|&p| idx[p] < top) else {
                    break;
                };
                let v = idx[pos] + 1;
                idx[pos..].iter_mut().for_each(|s| *s = v);
            }
            Ok(tally)
        })?;
        let mut total = IntTally::default();
        for t in shards {
            total.merge(t);
        }
        overshoots += total.overshoots;
        note_worst(&total);
        Some(total.stats(full_scale, fingerprint.clone()))
    } else {
        None
    };

    let sampled = if opts.samples > 0 {
        let chunks = opts.samples.div_ceil(SAMPLE_CHUNK);
        let parts = opts.execution.map(chunks as usize, |chunk| {
            let stream = kinds + chunk as u64;
            let mut m = root.fork(stream);
            let mut draw = ChaCha8Rng::seed_from_u64(cfg.seed);
            draw.set_stream(stream);
            let n = SAMPLE_CHUNK.min(opts.samples - chunk as u64 * SAMPLE_CHUNK);
            let mut tally = IntTally::default();
            let mut masks = vec![0u64; cfg.weight_bits as usize];
            let mut xs = vec![0u64; rows];
            let mut idx = vec![0u32; rows];
            for _ in 0..n {
                idx.iter_mut().for_each(|p| *p = draw.random_range(0..kinds as u32));
                let oracle = codec.load(&idx, &mut masks, &mut xs);
                let mac = m.mac_masks(&masks, &xs);
                tally.add(mac as i64 - oracle as i64, 1, || idx.iter().map(|&p| codec.split(p)).collect());
            }
            Ok(tally)
        })?;
        let mut total = IntTally::default();
        for t in parts {
            total.merge(t);
        }
        overshoots += total.overshoots;
        note_worst(&total);
        Some(total.stats(full_scale, fingerprint))
    } else {
        None
    };

    let single_row = single_row_table(&root, &codec, cfg)?;
    Ok(MacErrorMap {
        exhaustive,
        sampled,
        single_row,
        worst_case: worst,
        overshoots,
        full_scale,
    })
}

fn single_row_table(root: &MacroInstance, codec: &CaseCodec, cfg: &MacroConfig) -> Result<Vec<PointError>> {
    let mut m = root.clone();
    let mut masks = vec![0u64; cfg.weight_bits as usize];
    let mut xs = vec![0u64; cfg.rows];
    let pairs = 1u32 << (cfg.weight_bits + cfg.input_bits);
    Ok((0..pairs)
        .map(|p| {
            let oracle = codec.load(&[p], &mut masks, &mut xs[..1]);
            let mac = m.mac_masks(&masks, &xs[..1]);
            let (weight, input) = codec.split(p);
            PointError {
                weight,
                input,
                oracle,
                mac,
                error: mac as i64 - oracle as i64,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairErrorMap {
    /// Relative errors of the hybrid product (before output rounding).
    pub stats: ErrorStats,
    pub pairs: u64,
    #[serde(serialize_with = "ser_rational")]
    pub max_relative: BigRational,
    /// Same with the analog sub-MUL term dropped entirely.
    #[serde(serialize_with = "ser_rational")]
    pub max_relative_dropped: BigRational,
    /// Operands (weight, activation) that reach `max_relative`.
    pub argmax: Option<(FpValue, FpValue)>,
}

fn ser_rational<S: serde::Serializer>(r: &BigRational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

/// Histogram bucket width for relative errors.
pub const RELATIVE_BUCKET: f64 = 0.005;

/// Single-lane hybrid product against `fp_mul_exact` for every pair of
/// nonzero normal operands in `fmt`.
pub fn pair_product_error_map(fmt: FpFormat, cfg: &MacroConfig, execution: Execution) -> Result<PairErrorMap> {
    if fmt.total_bits() > 10 {
        return Err(Error::SpaceTooLarge {
            cases: 1u128 << (2 * fmt.total_bits()),
            cap: 1 << 20,
        });
    }
    let root = MacroInstance::new(cfg.clone())?.without_traces();
    let normals: Vec<FpValue> = fmt.all_finite().filter(|v| !v.is_zero() && !v.is_subnormal()).collect();

    struct Part {
        hist: Histogram,
        sum: f64,
        sum_sq: f64,
        max: BigRational,
        max_dropped: BigRational,
        argmax: Option<(FpValue, FpValue)>,
    }
    let parts = execution.map(normals.len(), |i| {
        let mut m = root.fork(i as u64);
        let w = normals[i];
        let mut part = Part {
            hist: Histogram::new(RELATIVE_BUCKET),
            sum: 0.0,
            sum_sq: 0.0,
            max: BigRational::zero(),
            max_dropped: BigRational::zero(),
            argmax: None,
        };
        for &x in &normals {
            let exact = fp_mul_exact(&w, &x);
            // wide output format: only the pre-rounding total is used
            let r = m.hybrid_fp_dot(&[w], &[x], FpFormat::BF16)?;
            let rel = relative_error(&r.total, &exact)?;
            let dropped = relative_error(&r.exact_sub_add, &exact)?;
            let f = rel.to_f64().unwrap_or(f64::NAN);
            part.hist.add(f, 1);
            part.sum += f;
            part.sum_sq += f * f;
            if part.argmax.is_none() || rel > part.max {
                part.max = rel;
                part.argmax = Some((w, x));
            }
            if dropped > part.max_dropped {
                part.max_dropped = dropped;
            }
        }
        Ok(part)
    })?;

    let pairs = (normals.len() * normals.len()) as u64;
    let mut hist = Histogram::new(RELATIVE_BUCKET);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let mut max = BigRational::zero();
    let mut max_dropped = BigRational::zero();
    let mut argmax = None;
    for p in parts {
        hist.merge(&p.hist);
        sum += p.sum;
        sum_sq += p.sum_sq;
        if argmax.is_none() || p.max > max {
            max = p.max;
            argmax = p.argmax;
        }
        if p.max_dropped > max_dropped {
            max_dropped = p.max_dropped;
        }
    }
    let n = pairs.max(1) as f64;
    let max_f = max.to_f64().unwrap_or(f64::NAN);
    Ok(PairErrorMap {
        stats: ErrorStats {
            count: pairs,
            max_abs: max_f,
            max_rel_fullscale: max_f,
            mean: sum / n,
            rms: (sum_sq / n).sqrt(),
            histogram: hist,
            fingerprint: cfg.fingerprint(),
        },
        pairs,
        max_relative: max,
        max_relative_dropped: max_dropped,
        argmax,
    })
}

/// The strict bound on dropping the sub-MUL term for positive normals.
pub fn dropped_sub_mul_bound() -> BigRational {
    rational(1, 4)
}

/// `bucket_lower_edge,bucket_width,count` rows, preceded by an optional
/// block of `#` comment lines.
pub fn write_histogram_csv<W: Write>(out: &mut W, hist: &Histogram, comments: &[String]) -> std::io::Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "bucket_lower_edge,bucket_width,count")?;
    for (k, n) in &hist.buckets {
        writeln!(out, "{},{},{n}", *k as f64 * hist.width, hist.width)?;
    }
    Ok(())
}

pub fn export_histogram(stats: &ErrorStats, path: &Path, comments: &[String]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_histogram_csv(&mut f, &stats.histogram, comments)?;
    f.flush()?;
    Ok(())
}

pub fn read_histogram_csv<R: BufRead>(input: R) -> Result<Histogram> {
    let mut hist: Option<Histogram> = None;
    let mut header = false;
    for (row, line) in input.lines().enumerate() {
        let line = line?;
        let row = row + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if !header {
            if line.trim() != "bucket_lower_edge,bucket_width,count" {
                return Err(Error::parse(row, 1, "expected histogram header"));
            }
            header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::parse(row, 1, format!("expected 3 fields, got {}", fields.len())));
        }
        let num = |col: usize| {
            fields[col]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::parse(row, col + 1, e.to_string()))
        };
        let (edge, width) = (num(0)?, num(1)?);
        let count: u64 = fields[2]
            .trim()
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::parse(row, 3, e.to_string()))?;
        if width.is_nan() || width <= 0.0 {
            return Err(Error::parse(row, 2, "bucket width must be positive"));
        }
        let h = hist.get_or_insert_with(|| Histogram::new(width));
        if h.width != width {
            return Err(Error::parse(row, 2, "bucket widths differ"));
        }
        *h.buckets.entry((edge / width).round() as i64).or_default() += count;
    }
    if !header {
        return Err(Error::parse(1, 1, "missing histogram header"));
    }
    Ok(hist.unwrap_or_default())
}

pub fn import_histogram(path: &Path) -> Result<Histogram> {
    read_histogram_csv(BufReader::new(std::fs::File::open(path)?))
}

/// Relative error of each single-row point against its oracle value
/// (`None` where the oracle is zero).
pub fn point_relative_errors(points: &[PointError]) -> Vec<Option<f64>> {
    points
        .iter()
        .map(|p| (p.oracle != 0).then(|| p.error as f64 / p.oracle as f64))
        .collect()
}
