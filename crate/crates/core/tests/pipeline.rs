//! Cross-module properties of the public API.

use fpcim_core::cim::{AdcReconstruction, MacroConfig, MacroInstance, WeightArray};
use fpcim_core::energy::{builtin_table, estimate_macs};
use fpcim_core::error_map::{exhaustive_mac_error_map, export_histogram, import_histogram, SweepOptions};
use fpcim_core::fp::{decode, encode, encode_f64, fp_dot_exact};
use fpcim_core::inference::{evaluate, parse_dataset, Mode, TinyNet};
use fpcim_core::parallel::Execution;
use fpcim_core::{ExactReal, FpFormat, FpValue};
use proptest::prelude::*;

/// Nearest finite value by exhaustive search; ties go to the even mantissa.
fn nearest(x: f64, fmt: FpFormat) -> Option<FpValue> {
    let mut best: Option<(f64, FpValue)> = None;
    for v in fmt.all_finite().filter(|v| !(v.sign() && v.is_zero())) {
        let d = (v.to_f64() - x).abs();
        let better = match &best {
            None => true,
            Some((bd, bv)) => d < *bd || (d == *bd && v.mantissa() % 2 == 0 && bv.mantissa() % 2 == 1),
        };
        if better {
            best = Some((d, v));
        }
    }
    best.map(|(_, v)| v)
}

fn normal_e4m3() -> impl Strategy<Value = FpValue> {
    (any::<bool>(), 1u32..=15, 0u32..8)
        .prop_filter("NaN", |&(_, e, m)| !(e == 15 && m == 7))
        .prop_map(|(s, e, m)| FpValue::new(s, e, m, FpFormat::E4M3).unwrap())
}

proptest! {
    #[test]
    fn encode_matches_nearest_search(x in -448.0f64..448.0) {
        let got = encode_f64(x, FpFormat::E4M3).unwrap();
        let want = nearest(x, FpFormat::E4M3).unwrap();
        prop_assert_eq!(got.to_f64(), want.to_f64());
    }

    #[test]
    fn hybrid_halves_compose(
        w in prop::collection::vec(normal_e4m3(), 1..10),
        x in prop::collection::vec(normal_e4m3(), 10),
        seed in any::<u64>(),
    ) {
        let x = &x[..w.len()];
        let cfg = MacroConfig { seed, noise_sigma: 0.01, ..MacroConfig::default() };
        let r = MacroInstance::new(cfg).unwrap().hybrid_fp_dot(&w, x, FpFormat::BF16).unwrap();
        prop_assert_eq!(&r.total, &(&r.exact_sub_add + &r.quantized_sub_mul));
        prop_assert_eq!(r.value, encode(&r.total, FpFormat::BF16).unwrap());
    }

    #[test]
    fn ideal_hybrid_matches_exact_without_sticky_lanes(
        w in prop::collection::vec(normal_e4m3(), 1..10),
        x in prop::collection::vec(normal_e4m3(), 10),
    ) {
        let x = &x[..w.len()];
        let mut m = MacroInstance::new(MacroConfig::default().ideal()).unwrap();
        let (total, flags) = m.hybrid_fp_dot_total(&w, x, None).unwrap();
        if flags.sticky_lanes == 0 {
            prop_assert_eq!(total, fp_dot_exact(&w, x).unwrap());
        }
    }

    #[test]
    fn truncating_macro_never_overshoots(
        w in prop::collection::vec(0u32..16, 4),
        x in prop::collection::vec(0u64..256, 4),
    ) {
        let cfg = MacroConfig::default();
        let wa = WeightArray::from_integers(&w, &cfg).unwrap();
        let got = MacroInstance::new(cfg).unwrap().mac_value(&wa, &x);
        let oracle: u64 = w.iter().zip(&x).map(|(&w, &x)| w as u64 * x).sum();
        // each of the 8 cycles loses at most 7 in its own bit weight
        prop_assert!(got <= oracle && oracle - got <= 7 * 255);
        prop_assert_eq!(got % 8, 0);
    }
}

#[test]
fn e5m2_round_trip() {
    let fmt = FpFormat::E5M2;
    let mut count = 0;
    for v in fmt.all_finite() {
        let back = encode(&decode(&v), fmt).unwrap();
        if v.is_zero() {
            assert!(back.is_zero());
        } else {
            assert_eq!(back, v);
        }
        count += 1;
    }
    // 256 codes minus 2 infinities and 6 NaNs
    assert_eq!(count, 248);
    assert_eq!(fmt.max_finite().to_f64(), 57344.0);
}

#[test]
fn error_map_is_independent_of_scheduling() {
    let cfg = MacroConfig {
        rows: 3,
        input_bits: 2,
        noise_sigma: 0.03,
        seed: 9,
        ..MacroConfig::default()
    };
    let run = |execution| {
        let opts = SweepOptions {
            samples: 70_000,
            execution,
            ..SweepOptions::default()
        };
        exhaustive_mac_error_map(&cfg, &opts).unwrap()
    };
    let sequential = run(Execution::Sequential);
    assert_eq!(sequential, run(Execution::with_jobs(3)));
    assert_eq!(sequential, run(Execution::default()));
    assert_eq!(sequential.exhaustive.as_ref().unwrap().count, 64u64.pow(3));
}

#[test]
fn midpoint_reconstruction_halves_the_worst_case() {
    let run = |adc_reconstruction| {
        let cfg = MacroConfig {
            rows: 2,
            input_bits: 3,
            adc_reconstruction,
            ..MacroConfig::default()
        };
        let opts = SweepOptions {
            samples: 0,
            ..SweepOptions::default()
        };
        exhaustive_mac_error_map(&cfg, &opts).unwrap()
    };
    let truncate = run(AdcReconstruction::Truncate);
    let midpoint = run(AdcReconstruction::Midpoint);
    let worst = |m: &fpcim_core::error_map::MacErrorMap| m.exhaustive.as_ref().unwrap().max_abs;
    // 3 cycles with at most 7 lost per cycle
    assert_eq!(worst(&truncate), 7.0 * 7.0);
    assert!(worst(&midpoint) < worst(&truncate));
    assert!(midpoint.overshoots > 0);
    assert_eq!(truncate.overshoots, 0);
}

#[test]
fn histogram_file_round_trip() {
    let cfg = MacroConfig {
        rows: 2,
        input_bits: 3,
        ..MacroConfig::default()
    };
    let opts = SweepOptions {
        samples: 0,
        ..SweepOptions::default()
    };
    let stats = exhaustive_mac_error_map(&cfg, &opts).unwrap().exhaustive.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hist.csv");
    export_histogram(&stats, &path, &["rows=2".into()]).unwrap();
    assert_eq!(import_histogram(&path).unwrap(), stats.histogram);
    assert_eq!(stats.histogram.mass(), stats.count);
}

const NET: &str = r#"{
  "layers": [
    {"in_dim": 2, "out_dim": 2, "activation": "relu",
     "weights": [[0, 7, 0], [1, 7, 0], [0, 6, 4], [0, 8, 2]],
     "bias": ["0", "-0.25"]},
    {"in_dim": 2, "out_dim": 2, "activation": "identity",
     "weights": [[0, 7, 0], [1, 6, 0], [1, 7, 0], [0, 7, 0]],
     "bias": ["0.125", "0"]}
  ]
}"#;

#[test]
fn tiny_network_round_trip_and_evaluation() {
    let net = TinyNet::from_json(NET).unwrap();
    assert_eq!(TinyNet::from_json(&net.to_json().unwrap()).unwrap(), net);
    assert_eq!((net.input_dim(), net.classes(), net.macs_per_sample()), (2, 2, 8));

    let ds = parse_dataset("# label,x0,x1\n0,1,0\n1,0,1\n1,0.5,0.25\n".as_bytes(), FpFormat::E4M3).unwrap();
    let cfg = MacroConfig::default().ideal();
    let exact = evaluate(&net, &ds, Mode::Exact, &cfg, Execution::Sequential).unwrap();
    let hybrid = evaluate(&net, &ds, Mode::Hybrid, &cfg, Execution::with_jobs(2)).unwrap();
    assert_eq!(exact.predictions, vec![0, 1, 1]);
    assert_eq!(hybrid.predictions, exact.predictions);
    assert_eq!(exact.accuracy, 1.0);
}

#[test]
fn workload_energy_is_linear_in_macs() {
    let t = builtin_table();
    let one = estimate_macs(1, &t).unwrap();
    let many = estimate_macs(1000, &t).unwrap();
    assert!((many.hybrid_fj - 1000.0 * one.hybrid_fj).abs() < 1e-9);
    assert!((one.baseline_fj - 78.848).abs() < 1e-12);
    assert_eq!(one.efficiency, many.efficiency);
}

#[test]
fn decimal_inputs_are_exact() {
    let x = ExactReal::from_decimal_str("0.375").unwrap();
    assert_eq!(x, ExactReal::new(3, -3));
    assert_eq!(encode(&x, FpFormat::E4M3).unwrap().to_f64(), 0.375);
}
