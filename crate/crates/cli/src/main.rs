use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use fpcim_core::cim::{write_trace_csv, MacroInstance};
use fpcim_core::energy::{self, builtin_table, format_decimal, format_efficiency};
use fpcim_core::error_map::{
    exhaustive_mac_error_map, pair_product_error_map, point_relative_errors, write_histogram_csv, SweepOptions,
};
use fpcim_core::fp::{decode, encode, encode_f64, fp_dot_exact};
use fpcim_core::inference::{compare_report, parse_dataset, write_confusion_csv, TinyNet};
use fpcim_core::parallel::Execution;
use fpcim_core::{Error, FpValue};

mod config;

use config::RunConfig;

const DEMO_NET: &str = include_str!("../assets/demo_net.json");
const DEMO_DATA: &str = include_str!("../assets/demo_test.csv");

/// Behavioral simulator of a hybrid digital/analog FP compute-in-memory macro.
#[derive(Parser)]
#[command(name = "fpcim", version)]
struct Cli {
    /// Flat `key = value` config file; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core). Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Directory for output artifacts.
    #[arg(long, global = true, default_value = "fpcim-out")]
    out: PathBuf,
    /// Override any config key, e.g. `--set noise_sigma=0.01`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One hybrid dot product, printed as JSON.
    Mac(MacArgs),
    /// Error maps of the quantized macro against exact oracles.
    Sweep(SweepArgs),
    /// Exact vs hybrid accuracy of a small classifier.
    Infer(InferArgs),
    /// Per-MAC energy breakdown and efficiency.
    Energy(EnergyArgs),
}

#[derive(Args)]
struct MacArgs {
    /// Comma-separated weights.
    #[arg(long, allow_hyphen_values = true)]
    w: Option<String>,
    /// Comma-separated activations.
    #[arg(long, allow_hyphen_values = true)]
    x: Option<String>,
    #[arg(long, value_name = "PATH", conflicts_with = "w")]
    w_file: Option<PathBuf>,
    #[arg(long, value_name = "PATH", conflicts_with = "x")]
    x_file: Option<PathBuf>,
    /// Operand format (E4M3, E5M2, ...).
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    out_format: Option<String>,
    /// Full-resolution ADC, no noise, no mismatch.
    #[arg(long)]
    ideal_adc: bool,
    /// Write the per-cycle analog trace to `<out>/trace.csv`.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    ideal_adc: bool,
    /// Fall back to random sampling when the space exceeds the cap.
    #[arg(long)]
    sample: bool,
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long)]
    max_cases: Option<u64>,
    /// Also run the FP pair-product map.
    #[arg(long)]
    pairs: bool,
}

#[derive(Args)]
struct InferArgs {
    /// Network JSON (defaults to the bundled digits MLP).
    #[arg(long, value_name = "PATH")]
    weights: Option<PathBuf>,
    /// Dataset CSV (defaults to the bundled digits test split).
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    #[arg(long)]
    ideal_adc: bool,
}

#[derive(Args)]
struct EnergyArgs {
    /// Multiply every table entry by this factor.
    #[arg(long)]
    scale: Option<String>,
    /// `kind.column = value` overrides applied to the built-in table.
    #[arg(long, value_name = "PATH")]
    table: Option<PathBuf>,
    /// Network JSON for a workload estimate (defaults to the bundled MLP).
    #[arg(long, value_name = "PATH")]
    weights: Option<PathBuf>,
    /// Number of inferences in the workload estimate.
    #[arg(long)]
    samples: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::SpaceTooLarge { .. } => 3,
                _ => 2,
            })
        }
    }
}

fn run(cli: Cli) -> fpcim_core::Result<()> {
    let mut rc = RunConfig::default();
    if let Some(path) = &cli.config {
        rc.apply_text(&fs::read_to_string(path)?)?;
    }
    if let Some(seed) = cli.seed {
        rc.set("seed", &seed.to_string())?;
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        rc.set(k.trim(), v)?;
    }
    let exec = Execution::with_jobs(cli.jobs);
    let out = Output::new(cli.out);
    match cli.command {
        Command::Mac(a) => cmd_mac(rc, a, &out),
        Command::Sweep(a) => cmd_sweep(rc, a, exec, &out),
        Command::Infer(a) => cmd_infer(rc, a, exec, &out),
        Command::Energy(a) => cmd_energy(rc, a, &out),
    }
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: PathBuf) -> Self {
        Self { dir }
    }

    fn path(&self, name: &str) -> fpcim_core::Result<PathBuf> {
        fs::create_dir_all(&self.dir)?;
        Ok(self.dir.join(name))
    }

    fn json(&self, name: &str, value: &Value) -> fpcim_core::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(name)?, text)?;
        Ok(())
    }

    /// The effective config in the format `--config` reads.
    fn run_config(&self, rc: &RunConfig) -> fpcim_core::Result<()> {
        fs::write(self.path("run.conf")?, rc.to_text())?;
        Ok(())
    }

    /// CSV artifact preceded by the effective config as `#` comments.
    fn csv(
        &self,
        name: &str,
        rc: &RunConfig,
        body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> fpcim_core::Result<()> {
        let mut buf = Vec::new();
        for (k, v) in rc.entries() {
            writeln!(buf, "# {k}={v}")?;
        }
        body(&mut buf)?;
        fs::write(self.path(name)?, buf)?;
        Ok(())
    }
}

fn parse_values(text: &str, rc: &RunConfig, what: &str) -> fpcim_core::Result<Vec<FpValue>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            let v: f64 = t
                .parse()
                .map_err(|_| Error::Config(format!("{what}: malformed number {t:?}")))?;
            encode_f64(v, rc.format)
        })
        .collect()
}

fn operand(inline: Option<String>, file: Option<PathBuf>, rc: &RunConfig, what: &str) -> fpcim_core::Result<Vec<FpValue>> {
    let text = match (inline, file) {
        (Some(t), _) => t,
        (None, Some(p)) => fs::read_to_string(p)?,
        (None, None) => return Err(Error::Config(format!("missing --{what} or --{what}-file"))),
    };
    parse_values(&text, rc, what)
}

fn cmd_mac(mut rc: RunConfig, a: MacArgs, out: &Output) -> fpcim_core::Result<()> {
    if a.ideal_adc {
        rc.set("ideal_adc", "true")?;
    }
    if let Some(f) = &a.format {
        rc.set("format", f)?;
    }
    if let Some(f) = &a.out_format {
        rc.set("out_format", f)?;
    }
    let w = operand(a.w, a.w_file, &rc, "w")?;
    let x = operand(a.x, a.x_file, &rc, "x")?;
    let cfg = rc.effective_macro()?;
    let exact = fp_dot_exact(&w, &x)?;
    let mut m = MacroInstance::new(cfg.clone())?;
    let r = m.hybrid_fp_dot(&w, &x, rc.out_format)?;
    let exact_rounded = encode(&exact, rc.out_format)?;
    let report = json!({
        "config": rc.to_json(),
        "value": decode(&r.value).to_string(),
        "value_bits": format!("{:#x}", r.value.to_bits()),
        "out_format": rc.out_format.name(),
        "total": r.total.to_string(),
        "exact_sub_add": r.exact_sub_add.to_string(),
        "quantized_sub_mul": r.quantized_sub_mul.to_string(),
        "e_max": r.e_max,
        "exact": exact.to_string(),
        "exact_rounded": decode(&exact_rounded).to_string(),
        "matches_exact": r.value == exact_rounded,
        "flags": r.flags,
        "mac_invocations": r.traces.len(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    out.json("mac.json", &report)?;
    out.run_config(&rc)?;
    if a.trace {
        out.csv("trace.csv", &rc, |buf| write_trace_csv(buf, &r.traces, cfg.weight_bits))?;
    }
    Ok(())
}

fn cmd_sweep(mut rc: RunConfig, a: SweepArgs, exec: Execution, out: &Output) -> fpcim_core::Result<()> {
    if !rc.input_bits_set {
        rc.set("input_bits", "4")?;
    }
    if a.ideal_adc {
        rc.set("ideal_adc", "true")?;
    }
    if a.sample {
        rc.set("allow_sampling", "true")?;
    }
    if a.pairs {
        rc.set("pairs", "true")?;
    }
    if let Some(n) = a.samples {
        rc.set("samples", &n.to_string())?;
    }
    if let Some(n) = a.max_cases {
        rc.set("max_cases", &n.to_string())?;
    }
    let cfg = rc.effective_macro()?;
    let opts = SweepOptions {
        max_cases: rc.max_cases,
        samples: rc.samples,
        allow_sampling: rc.allow_sampling,
        execution: exec,
    };
    let map = exhaustive_mac_error_map(&cfg, &opts)?;
    let pairs = if rc.pairs {
        // the pair map runs on a single lane with the array's own width
        let mut pair_cfg = rc.clone();
        if !rc.input_bits_set {
            pair_cfg.set("input_bits", "8")?;
        }
        Some(pair_product_error_map(rc.format, &pair_cfg.effective_macro()?, exec)?)
    } else {
        None
    };
    out.run_config(&rc)?;
    let headline = map.exhaustive.as_ref().or(map.sampled.as_ref());
    out.json(
        "sweep.json",
        &json!({
            "config": rc.to_json(),
            "full_scale": map.full_scale,
            "exhaustive": map.exhaustive,
            "sampled": map.sampled,
            "worst_case": map.worst_case,
            "overshoots": map.overshoots,
            "pairs": pairs,
        }),
    )?;
    if let Some(stats) = headline {
        out.csv("histogram.csv", &rc, |buf| write_histogram_csv(buf, &stats.histogram, &[]))?;
    }
    out.csv("single_row.csv", &rc, |buf| {
        writeln!(buf, "weight,input,oracle,mac,error,relative")?;
        for (p, rel) in map.single_row.iter().zip(point_relative_errors(&map.single_row)) {
            let rel = rel.map(|r| r.to_string()).unwrap_or_default();
            writeln!(buf, "{},{},{},{},{},{rel}", p.weight, p.input, p.oracle, p.mac, p.error)?;
        }
        Ok(())
    })?;
    if let Some(p) = &pairs {
        out.csv("pair_histogram.csv", &rc, |buf| write_histogram_csv(buf, &p.stats.histogram, &[]))?;
    }

    if let Some(s) = &map.exhaustive {
        println!("exhaustive: {} cases, mean {:.6}, rms {:.6}", s.count, s.mean, s.rms);
    }
    if let Some(s) = &map.sampled {
        println!("sampled:    {} cases, mean {:.6}, rms {:.6}", s.count, s.mean, s.rms);
    }
    if let Some(s) = headline {
        println!(
            "max_abs = {}  max_rel_fullscale = {:.6} (of full scale {})",
            s.max_abs, s.max_rel_fullscale, map.full_scale
        );
    }
    if let Some(p) = &pairs {
        println!(
            "pair products: max relative error {} (sub-MUL dropped: {})",
            p.max_relative, p.max_relative_dropped
        );
    }
    Ok(())
}

fn load_net(path: Option<&Path>) -> fpcim_core::Result<TinyNet> {
    match path {
        Some(p) => TinyNet::load(p),
        None => TinyNet::from_json(DEMO_NET),
    }
}

fn cmd_infer(mut rc: RunConfig, a: InferArgs, exec: Execution, out: &Output) -> fpcim_core::Result<()> {
    if a.ideal_adc {
        rc.set("ideal_adc", "true")?;
    }
    if let Some(p) = &a.weights {
        rc.set("weights", &p.display().to_string())?;
    }
    if let Some(p) = &a.data {
        rc.set("data", &p.display().to_string())?;
    }
    let cfg = rc.effective_macro()?;
    let net = load_net(rc.weights.as_deref())?;
    let ds = match &rc.data {
        Some(p) => parse_dataset(std::io::BufReader::new(fs::File::open(p)?), rc.format)?,
        None => parse_dataset(DEMO_DATA.as_bytes(), rc.format)?,
    };
    let report = compare_report(&net, &ds, &cfg, exec)?;
    out.json(
        "infer.json",
        &json!({
            "config": rc.to_json(),
            "dataset_scale": ds.scale,
            "report": report,
        }),
    )?;
    out.csv("confusion.csv", &rc, |buf| write_confusion_csv(buf, &report))?;
    out.run_config(&rc)?;
    println!("samples:  {}", report.samples);
    println!("exact:    {:.4}", report.baseline_accuracy);
    println!("hybrid:   {:.4}", report.hybrid_accuracy);
    println!("delta:    {:+.2} percentage points", report.delta * 100.0);
    println!("differing predictions: {}", report.prediction_mismatches);
    Ok(())
}

fn cmd_energy(mut rc: RunConfig, a: EnergyArgs, out: &Output) -> fpcim_core::Result<()> {
    if let Some(s) = &a.scale {
        rc.set("energy_scale", s)?;
    }
    if let Some(p) = &a.table {
        rc.set("energy_table", &p.display().to_string())?;
    }
    if let Some(p) = &a.weights {
        rc.set("weights", &p.display().to_string())?;
    }
    if let Some(n) = a.samples {
        rc.set("workload_samples", &n.to_string())?;
    }
    let mut table = builtin_table();
    if let Some(p) = &rc.energy_table {
        table = table.with_overrides(&fs::read_to_string(p)?)?;
    }
    let table = table.scaled(&energy::parse_decimal(&rc.energy_scale)?);
    let ratio = energy::efficiency(&table)?;
    let workload = match rc.workload_samples {
        Some(n) => Some(energy::estimate_workload(&load_net(rc.weights.as_deref())?, n, &table)?),
        None => None,
    };
    println!("{table}");
    println!("efficiency: {}", format_efficiency(&ratio));
    if let Some(w) = &workload {
        println!(
            "workload: {} MACs, hybrid {} fJ, baseline {} fJ",
            w.mac_count, w.hybrid_fj, w.baseline_fj
        );
    }
    println!("(mantissa MAC only; exponent-path energy is the same in both designs and not counted)");
    let total = |b: &energy::Breakdown| format_decimal(&b.total(), 3);
    out.json(
        "energy.json",
        &json!({
            "config": rc.to_json(),
            "totals_fj_per_mac": {
                "sub_add": total(&table.sub_add),
                "sub_mul": total(&table.sub_mul),
                "baseline": total(&table.baseline),
                "hybrid": format_decimal(&table.hybrid_total(), 3),
            },
            "efficiency": format_decimal(&ratio, 6),
            "efficiency_display": format_efficiency(&ratio),
            "workload": workload,
            "note": "exponent-path energy excluded",
        }),
    )?;
    out.run_config(&rc)?;
    Ok(())
}
