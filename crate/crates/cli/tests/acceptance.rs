//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed. Reference values are computed here with
//! plain integer arithmetic, independently of the library's own oracles.

use std::fs;
use std::io::Cursor;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use fpcim_core::cim::{MacroConfig, MacroInstance, WeightArray};
use fpcim_core::decomposition::{significance_ratio, split_mantissa_product, MantissaFraction};
use fpcim_core::energy::{builtin_table, efficiency, format_decimal, format_efficiency};
use fpcim_core::error_map::{dropped_sub_mul_bound, exhaustive_mac_error_map, SweepOptions};
use fpcim_core::fp::{decode, encode, fp_dot_exact, fp_mul_exact};
use fpcim_core::inference::{compare_report, parse_dataset, TinyNet};
use fpcim_core::parallel::Execution;
use fpcim_core::{FpFormat, FpValue};
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn c1_split_identity() -> Outcome {
    let start = Instant::now();
    let mut checked = 0u64;
    let mut bad = 0u64;
    for bits in [3u32, 8] {
        let one = 1i64 << bits;
        for a in 0..one {
            for b in 0..one {
                let m0 = MantissaFraction::new(a as u64, bits).unwrap();
                let m1 = MantissaFraction::new(b as u64, bits).unwrap();
                let sp = split_mantissa_product(m0, m1);
                let reference = ratio((one + a) * (one + b), one * one);
                if sp.product().to_rational() != reference {
                    bad += 1;
                }
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        bad == 0 && checked == 64 + 65536 && within(elapsed, 1),
        format!("{checked} pairs, {bad} mismatches, {elapsed:.2?}"),
    )
}

fn c2_significance_bound() -> Outcome {
    let start = Instant::now();
    let quarter = ratio(1, 4);
    let mut violations = 0u64;
    let mut max3 = ratio(0, 1);
    for bits in 1u32..=8 {
        let one = 1i64 << bits;
        for a in 0..one {
            for b in 0..one {
                let r = significance_ratio(
                    MantissaFraction::new(a as u64, bits).unwrap(),
                    MantissaFraction::new(b as u64, bits).unwrap(),
                );
                // M0 M1 / ((1+M0)(1+M1)) with M = k / 2^bits
                if r != ratio(a * b, (one + a) * (one + b)) || r >= quarter {
                    violations += 1;
                }
                if bits == 3 && r > max3 {
                    max3 = r;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let expected = ratio(49, 225);
    outcome(
        violations == 0 && max3 == expected && dropped_sub_mul_bound() == quarter && within(elapsed, 1),
        format!("1..=8-bit fractions, {violations} violations, 3-bit max {max3}, {elapsed:.2?}"),
    )
}

/// E4M3 bit pattern as `k * 2^-9`, or `None` for NaN.
fn e4m3_reference(bits: u32) -> Option<i64> {
    let sign = if bits & 0x80 != 0 { -1 } else { 1 };
    let e = (bits >> 3) & 0xF;
    let m = (bits & 7) as i64;
    if e == 15 && m == 7 {
        return None;
    }
    let k = if e == 0 { m } else { (8 + m) << (e - 1) };
    Some(sign * k)
}

fn c3_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let fmt = FpFormat::E4M3;
    let mut finite = Vec::new();
    let mut round_trip_bad = 0u32;
    for bits in 0u32..256 {
        match (e4m3_reference(bits), FpValue::from_bits(bits, fmt)) {
            (None, parsed) => round_trip_bad += parsed.is_ok() as u32,
            (Some(k), Ok(v)) => {
                let back = encode(&decode(&v), fmt).map(|e| e.to_bits());
                // the exact value of -0 is 0, which encodes as +0
                let want = if bits == 0x80 { 0 } else { bits };
                if decode(&v).to_rational() != ratio(k, 1 << 9) || back.ok() != Some(want) {
                    round_trip_bad += 1;
                }
                finite.push((v, k));
            }
            (Some(_), Err(_)) => round_trip_bad += 1,
        }
    }
    let mut product_bad = 0u64;
    for (a, ka) in &finite {
        for (b, kb) in &finite {
            if fp_mul_exact(a, b).to_rational() != ratio(ka * kb, 1 << 18) {
                product_bad += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let pairs = finite.len() * finite.len();
    outcome(
        finite.len() == 254 && product_bad == 0 && round_trip_bad == 0 && within(elapsed, 10),
        format!(
            "{pairs} products ({product_bad} wrong), 256 encodings ({round_trip_bad} wrong), {elapsed:.2?}"
        ),
    )
}

fn random_normal(rng: &mut ChaCha8Rng, exponent_lo: u32) -> FpValue {
    let e = exponent_lo + rng.random_range(0..3);
    let m = if e == 15 { rng.random_range(0..7) } else { rng.random_range(0..8) };
    FpValue::new(rng.random(), e, m, FpFormat::E4M3).unwrap()
}

fn c4_ideal_equivalence() -> Outcome {
    let start = Instant::now();
    let ideal = MacroConfig::default().ideal();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);

    // single-row table: every 4-bit weight against every 4-bit input
    let narrow = MacroConfig {
        input_bits: 4,
        ..ideal.clone()
    };
    let mut table_bad = 0;
    let mut m = MacroInstance::new(narrow.clone()).unwrap();
    for w in 0u32..16 {
        let wa = WeightArray::from_integers(&[w, 0, 0, 0], &narrow).unwrap();
        for x in 0u64..16 {
            table_bad += (m.mac_value(&wa, &[x, 0, 0, 0]) != w as u64 * x) as u32;
        }
    }

    let mut rows_bad = 0;
    let mut m = MacroInstance::new(ideal.clone()).unwrap();
    let random_rows = 100_000;
    for _ in 0..random_rows {
        let w: Vec<u32> = (0..4).map(|_| rng.random_range(0..16)).collect();
        let x: Vec<u64> = (0..4).map(|_| rng.random_range(0..256)).collect();
        let oracle: u64 = w.iter().zip(&x).map(|(&w, &x)| w as u64 * x).sum();
        let wa = WeightArray::from_integers(&w, &ideal).unwrap();
        rows_bad += (m.mac_value(&wa, &x) != oracle) as u32;
    }

    // lane exponent sums confined to a span of 4 keep every aligned
    // significand inside the 8-bit register
    let mut dot_bad = 0;
    let mut sticky = 0;
    let vectors = 10_000;
    for _ in 0..vectors {
        let (lo_w, lo_x) = (rng.random_range(1..14), rng.random_range(1..14));
        let mut w: Vec<FpValue> = (0..4).map(|_| random_normal(&mut rng, lo_w)).collect();
        let x: Vec<FpValue> = (0..4).map(|_| random_normal(&mut rng, lo_x)).collect();
        if rng.random_range(0..8) == 0 {
            w[rng.random_range(0..4)] = FpValue::zero(FpFormat::E4M3);
        }
        let (total, flags) = m.hybrid_fp_dot_total(&w, &x, None).unwrap();
        sticky += flags.sticky_lanes;
        let reference: i64 = w
            .iter()
            .zip(&x)
            .map(|(a, b)| e4m3_reference(a.to_bits()).unwrap() * e4m3_reference(b.to_bits()).unwrap())
            .sum();
        let exact = fp_dot_exact(&w, &x).unwrap();
        if total != exact || exact.to_rational() != ratio(reference, 1 << 18) {
            dot_bad += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        table_bad == 0 && rows_bad == 0 && dot_bad == 0 && sticky == 0 && within(elapsed, 60),
        format!(
            "256-case table {table_bad} wrong, {random_rows} 4-row cases {rows_bad} wrong, \
             {vectors} dot vectors {dot_bad} wrong ({sticky} sticky lanes), {elapsed:.2?}"
        ),
    )
}

/// Truncating-ADC model coded directly: each cycle's column-weighted count
/// loses its low 3 bits, so the error is `-sum_j 2^j (S_j mod 8)`. Walks
/// all 2^32 ordered arrays of four (4-bit weight, 4-bit input) rows.
fn naive_sweep() -> (u64, i64, u64, u64) {
    // per-cycle counts of one row packed one byte per input bit; four rows
    // never carry across bytes (4 * 15 < 256)
    let packed: Vec<u32> = (0u32..256)
        .map(|p| {
            let (w, x) = (p >> 4, p & 15);
            (0..4).map(|j| (w * ((x >> j) & 1)) << (8 * j)).sum()
        })
        .collect();
    let error = |s: u32| -> i64 {
        let low = s & 0x0707_0707;
        -(((low & 0xFF) + 2 * ((low >> 8) & 0xFF) + 4 * ((low >> 16) & 0xFF) + 8 * (low >> 24)) as i64)
    };
    let (mut max_abs, mut sum, mut sum_sq, mut count) = (0u64, 0i64, 0u64, 0u64);
    for &a in &packed {
        for &b in &packed {
            let ab = a + b;
            for &c in &packed {
                let abc = ab + c;
                let (mut local_max, mut local_sum, mut local_sq) = (0u64, 0i64, 0u64);
                for &d in &packed {
                    let e = error(abc + d);
                    local_max = local_max.max(e.unsigned_abs());
                    local_sum += e;
                    local_sq += (e * e) as u64;
                }
                max_abs = max_abs.max(local_max);
                sum += local_sum;
                sum_sq += local_sq;
                count += 256;
            }
        }
    }
    (max_abs, sum, sum_sq, count)
}

fn c5_quantized_error() -> Outcome {
    // golden values frozen from the sweep and the brute-force walk below
    const GOLDEN_MAX_ABS: f64 = 105.0;
    const GOLDEN_MEAN: f64 = -49.21875;
    const GOLDEN_RMS: f64 = 54.26713439089998;
    let start = Instant::now();
    let cfg = MacroConfig {
        input_bits: 4,
        ..MacroConfig::default()
    };
    let map = match exhaustive_mac_error_map(&cfg, &SweepOptions::default()) {
        Ok(m) => m,
        Err(e) => return outcome(false, format!("sweep failed: {e}")),
    };
    let sweep_time = start.elapsed();
    let Some(stats) = map.exhaustive.as_ref() else {
        return outcome(false, "sweep fell back to sampling");
    };
    let (n_max, n_sum, n_sq, n_count) = naive_sweep();
    let n_mean = n_sum as f64 / n_count as f64;
    let n_rms = (n_sq as f64 / n_count as f64).sqrt();
    let cross_checked = stats.count == n_count
        && stats.max_abs == n_max as f64
        && stats.mean == n_mean
        && (stats.rms - n_rms).abs() <= 1e-12 * n_rms
        && map.overshoots == 0;
    let golden = stats.max_abs == GOLDEN_MAX_ABS
        && stats.mean == GOLDEN_MEAN
        && (stats.rms - GOLDEN_RMS).abs() <= 1e-9;
    let ceiling = 105.0 / 900.0;
    let rel = stats.max_rel_fullscale;
    let pass = cross_checked && golden && rel <= 0.07 && rel <= ceiling && within(sweep_time, 300);
    outcome(
        pass,
        format!(
            "max_rel_fullscale {rel:.6} ({}/{}) vs limit 0.07 and ceiling {ceiling:.6}; \
             mean {} rms {:.6}; golden {}; naive cross-check {}; sweep {sweep_time:.2?}",
            stats.max_abs,
            map.full_scale,
            stats.mean,
            stats.rms,
            if golden { "match" } else { "MISMATCH" },
            if cross_checked { "match" } else { "MISMATCH" },
        ),
    )
}

fn c6_energy() -> Outcome {
    let start = Instant::now();
    let t = builtin_table();
    let totals = [t.sub_add.total(), t.sub_mul.total(), t.baseline.total()].map(|r| format_decimal(&r, 3));
    let eff = efficiency(&t).unwrap();
    let pass = totals == ["29.120", "22.272", "78.848"]
        && eff == ratio(78_848, 51_392)
        && format_decimal(&eff, 3) == "1.534"
        && format_efficiency(&eff) == "1.53\u{d7}"
        && within(start.elapsed(), 1);
    outcome(
        pass,
        format!("totals {} fJ/MAC, efficiency {}", totals.join(" / "), format_efficiency(&eff)),
    )
}

fn c7_demo_accuracy() -> Outcome {
    let start = Instant::now();
    let net = TinyNet::from_json(include_str!("../assets/demo_net.json")).unwrap();
    let ds = parse_dataset(Cursor::new(include_str!("../assets/demo_test.csv")), net.weight_format).unwrap();
    let exec = Execution::default();
    let default = compare_report(&net, &ds, &MacroConfig::default(), exec).unwrap();
    let ideal = compare_report(&net, &ds, &MacroConfig::default().ideal(), exec).unwrap();
    let elapsed = start.elapsed();
    outcome(
        default.delta.abs() <= 0.02 && ideal.delta == 0.0 && within(elapsed, 300),
        format!(
            "{} samples: exact {:.4}, hybrid {:.4} (delta {:+.2}pp), ideal delta {:+.2}pp \
             with {} differing predictions, {elapsed:.2?}",
            default.samples,
            default.baseline_accuracy,
            default.hybrid_accuracy,
            100.0 * default.delta,
            100.0 * ideal.delta,
            ideal.prediction_mismatches,
        ),
    )
}

fn run_cli(out: &Path, jobs: u32, args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_fpcim"))
        .args(["--seed", "11", "--set", "noise_sigma=0.02", "--set", "cap_mismatch_sigma=0.01"])
        .args(["--jobs", &jobs.to_string(), "--out"])
        .arg(out)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&status.stderr)))
    }
}

/// Files of a directory, sorted by name, with their bytes.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn c8_determinism() -> Outcome {
    let commands: [&[&str]; 4] = [
        &["mac", "--w", "1.5,-0.75,2,0.375,3", "--x", "0.5,1.25,-3,1,0.875", "--trace"],
        &["--set", "rows=2", "sweep", "--samples", "20000", "--pairs"],
        &["infer"],
        &["energy", "--samples", "100"],
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    let mut files = 0;
    for (i, args) in commands.iter().enumerate() {
        let runs: Result<Vec<_>, String> = [(1, 'a'), (1, 'b'), (8, 'c')]
            .iter()
            .map(|&(jobs, tag)| {
                let dir = tmp.path().join(format!("{i}{tag}"));
                run_cli(&dir, jobs, args).map(|()| snapshot(&dir))
            })
            .collect();
        let runs = match runs {
            Ok(r) => r,
            Err(e) => return outcome(false, e),
        };
        files += runs[0].len();
        if runs[0].is_empty() || runs[0] != runs[1] || runs[0] != runs[2] {
            differing.push(args.iter().find(|a| !a.starts_with('-') && !a.contains('=')).unwrap().to_string());
        }
    }
    outcome(
        differing.is_empty(),
        format!(
            "4 commands x (rerun, --jobs 1 vs 8), {files} artifacts compared, differing: {}",
            if differing.is_empty() { "none".into() } else { differing.join(", ") }
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("split identity", c1_split_identity),
        ("sub-MUL significance bound", c2_significance_bound),
        ("exact FP oracle", c3_oracle_equivalence),
        ("ideal-path equivalence", c4_ideal_equivalence),
        ("quantized error map", c5_quantized_error),
        ("energy table", c6_energy),
        ("demo accuracy", c7_demo_accuracy),
        ("determinism", c8_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += !o.pass as usize;
        println!("criterion {} {name}: {} ({})", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
