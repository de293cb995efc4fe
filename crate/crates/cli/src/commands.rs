//! Subcommand implementations. Each returns the report text; the driver writes it.

use crate::config::{CliError, CliResult};
use crate::job_args;
use crate::report::{float17, json, sig6};
use dprc::accountant::{self, AccountantConfig};
use dprc::costmodel::{self, CostParams, Method};
use dprc::envelope::{self, EnvelopeGrid};
use dprc::estimators::{relative_error_benchmark, BenchmarkResult, Estimator, InstanceKind};
use dprc::numerics::SeededStream;
use dprc::trainer::{self, Routine, SyntheticTask, ToyModel, TrainConfig, TrainOutcome};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(CliError::config(format!("unknown format '{other}' (csv|json)"))),
        }
    }
}

fn parse<T: std::str::FromStr<Err = dprc::Error>>(s: &str) -> CliResult<T> {
    Ok(s.parse::<T>()?)
}

job_args!(
    /// Relative error of the Hutch and Hutch++ norm estimates on random instances.
    EstimateArgs {
        /// Tokens T per instance [default: 256]
        tokens: usize,
        /// Activation width d [default: 256]
        d: usize,
        /// Output-gradient width p [default: 256]
        p: usize,
        /// Sketch width k [default: 32]
        k: usize,
        /// Independent instances, at least 30 [default: 30]
        trials: usize,
        /// Instance family: normal | uniform [default: normal]
        instance: String,
    }
);

pub fn estimate(a: EstimateArgs, seed: u64, format: Option<Format>) -> CliResult<String> {
    let instance: InstanceKind = parse(a.instance.as_deref().unwrap_or("normal"))?;
    let r: BenchmarkResult = relative_error_benchmark(
        a.tokens.unwrap_or(256),
        a.d.unwrap_or(256),
        a.p.unwrap_or(256),
        a.k.unwrap_or(32),
        a.trials.unwrap_or(30),
        instance,
        &SeededStream::new(seed),
    )?;
    eprintln!(
        "hutch mean relative error {} (ci95 {}), hutch++ {} (ci95 {})",
        sig6(r.hutch.mean),
        sig6(r.hutch.ci95),
        sig6(r.hutchpp.mean),
        sig6(r.hutchpp.ci95)
    );
    Ok(match format.unwrap_or(Format::Csv) {
        Format::Csv => format!("{}\n{}", BenchmarkResult::CSV_HEADER, r.csv_rows()),
        Format::Json => json(&r),
    })
}

job_args!(
    /// Build an envelope CDF grid and write it in the envelope file format.
    EnvelopeArgs {
        /// Estimator: hutch | hutchpp [default: hutch]
        estimator: String,
        /// Sketch width k [default: 32]
        k: u32,
        /// Ambient dimension d [default: 64]
        d: u32,
        /// Left end of the grid [default: 0.0001]
        x_min: f64,
        /// Right end of the grid [default: 3]
        x_max: f64,
        /// Uniform grid points [default: 2048]
        n_grid: usize,
        /// Block-weight grid size in the middle region [default: 501]
        n_lambda: usize,
    }
);

pub fn build_envelope(a: &EnvelopeArgs) -> CliResult<EnvelopeGrid> {
    let est: Estimator = parse(a.estimator.as_deref().unwrap_or("hutch"))?;
    let (k, d) = (a.k.unwrap_or(32), a.d.unwrap_or(64));
    let (x_min, x_max, n_grid) = (a.x_min.unwrap_or(1e-4), a.x_max.unwrap_or(3.0), a.n_grid.unwrap_or(2048));
    Ok(match est {
        Estimator::Hutch => {
            envelope::build_hutch_envelope(k, d, x_min, x_max, n_grid, a.n_lambda.unwrap_or(envelope::DEFAULT_N_LAMBDA))?
        }
        Estimator::Hutchpp => envelope::build_hutchpp_envelope(k, d, x_min, x_max, n_grid)?,
    })
}

pub fn envelope_cmd(a: EnvelopeArgs, format: Option<Format>) -> CliResult<String> {
    let g = build_envelope(&a)?;
    eprintln!("envelope {} k={} d={}: x+ = {}, {} points", g.estimator.as_str(), g.k, g.d, sig6(g.x_plus), g.points().len());
    match format {
        Some(Format::Json) => {
            #[derive(Serialize)]
            struct Out<'a> {
                estimator: &'a str,
                k: u32,
                d: u32,
                x_plus: f64,
                n_lambda: usize,
                pair_cap: Option<u32>,
                points: Vec<[f64; 2]>,
            }
            Ok(json(&Out {
                estimator: g.estimator.as_str(),
                k: g.k,
                d: g.d,
                x_plus: g.x_plus,
                n_lambda: g.n_lambda,
                pair_cap: g.pair_cap,
                points: g.points().iter().map(|&(x, f)| [x, f]).collect(),
            }))
        }
        _ => Ok(envelope::serialize_envelope(&g)),
    }
}

job_args!(
    /// Sweep the uniform-dominance threshold x+ over (k, d) pairs.
    XplusArgs {
        /// Sketch widths, comma separated [default: 32]
        #[arg(value_delimiter = ',')]
        k: Vec<u32>,
        /// Dimensions, comma separated [default: 64]
        #[arg(value_delimiter = ',')]
        d: Vec<u32>,
        /// Bisection tolerance on x [default: 0.0001]
        tau: f64,
        /// Block-weight grid size [default: 501]
        n_lambda: usize,
    }
);

#[derive(Serialize)]
struct XplusRow {
    k: u32,
    d: u32,
    x_plus: f64,
    scaled: f64,
}

pub fn xplus(a: XplusArgs, format: Option<Format>) -> CliResult<String> {
    let ks = a.k.filter(|v| !v.is_empty()).unwrap_or_else(|| vec![32]);
    let ds = a.d.filter(|v| !v.is_empty()).unwrap_or_else(|| vec![64]);
    let tau = a.tau.unwrap_or(envelope::DEFAULT_TAU);
    let n_lambda = a.n_lambda.unwrap_or(envelope::DEFAULT_N_LAMBDA);
    let mut rows = Vec::new();
    for &k in &ks {
        for &d in &ds {
            let x = envelope::find_x_plus_with(k, d, tau, n_lambda)?;
            let scaled = (x - 1.0) * k as f64 * d as f64;
            eprintln!("k={k} d={d}: x+ = {} ((x+ - 1)dk = {})", sig6(x), sig6(scaled));
            rows.push(XplusRow { k, d, x_plus: x, scaled });
        }
    }
    Ok(match format.unwrap_or(Format::Csv) {
        Format::Json => json(&rows),
        Format::Csv => {
            let mut out = String::from("k,d,x_plus,x_plus_minus_1_times_dk\n");
            for r in &rows {
                let _ = writeln!(out, "{},{},{},{}", r.k, r.d, float17(r.x_plus), float17(r.scaled));
            }
            out
        }
    })
}

job_args!(
    /// ε* of a DP-SGD(-RC) run from its noise multiplier and schedule.
    AccountArgs {
        /// Noise multiplier σ [default: 1]
        sigma: f64,
        /// Dataset size N [default: 2225]
        n: u64,
        /// Batch size B [default: 64]
        batch: u64,
        /// Epochs E [default: 10]
        epochs: u32,
        /// Target δ [default: 0.00001]
        delta: f64,
        /// Privacy-loss mesh h [default: 0.0001]
        h: f64,
        /// Privacy-loss support cap [default: 16]
        t_max: f64,
        /// Scale bins for the envelope [default: 512]
        scale_bins: usize,
        /// Envelope file; absent means deterministic clipping
        envelope: PathBuf,
    }
);

fn load_envelope(path: &Path) -> CliResult<EnvelopeGrid> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(envelope::parse_envelope(&text)?)
}

fn accountant_config(a: &AccountArgs, sigma_default: f64) -> CliResult<AccountantConfig> {
    let mut cfg = AccountantConfig::new(
        a.sigma.unwrap_or(sigma_default),
        a.n.unwrap_or(2225),
        a.batch.unwrap_or(64),
        a.epochs.unwrap_or(10),
        a.delta.unwrap_or(1e-5),
    );
    cfg.h = a.h.unwrap_or(accountant::DEFAULT_H);
    cfg.t_max = a.t_max.unwrap_or(accountant::DEFAULT_T_MAX);
    cfg.scale_bins = a.scale_bins.unwrap_or(accountant::DEFAULT_SCALE_BINS);
    if let Some(p) = &a.envelope {
        cfg.envelope = Some(load_envelope(p)?);
    }
    Ok(cfg)
}

fn csv_of<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("report is serializable");
    let map = v.as_object().expect("report is an object");
    let header: Vec<&str> = map.keys().map(String::as_str).collect();
    let row: Vec<String> = map
        .values()
        .map(|x| match x {
            serde_json::Value::Number(n) if n.is_f64() => float17(n.as_f64().unwrap_or(f64::NAN)),
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        })
        .collect();
    format!("{}\n{}\n", header.join(","), row.join(","))
}

pub fn account(a: AccountArgs, format: Option<Format>) -> CliResult<String> {
    let cfg = accountant_config(&a, 1.0)?;
    let r = accountant::account(&cfg)?;
    eprintln!("eps* = {} at delta = {} (sigma {}, {} steps)", sig6(r.eps), sig6(r.delta_tgt), sig6(r.sigma), r.total_steps);
    Ok(match format.unwrap_or(Format::Json) {
        Format::Json => json(&r),
        Format::Csv => csv_of(&r),
    })
}

job_args!(
    /// Smallest noise multiplier meeting a target (ε, δ).
    CalibrateArgs {
        /// Target ε [default: 2]
        eps: f64,
        /// Starting guess for σ [default: 2]
        sigma_guess: f64,
        /// Dataset size N [default: 2225]
        n: u64,
        /// Batch size B [default: 64]
        batch: u64,
        /// Epochs E [default: 10]
        epochs: u32,
        /// Target δ [default: 0.00001]
        delta: f64,
        /// Privacy-loss mesh h [default: 0.0001]
        h: f64,
        /// Privacy-loss support cap [default: 16]
        t_max: f64,
        /// Scale bins for the envelope [default: 512]
        scale_bins: usize,
        /// Envelope file; absent means deterministic clipping
        envelope: PathBuf,
    }
);

pub fn calibrate(a: CalibrateArgs, format: Option<Format>) -> CliResult<String> {
    let acc = AccountArgs {
        sigma: a.sigma_guess,
        n: a.n,
        batch: a.batch,
        epochs: a.epochs,
        delta: a.delta,
        h: a.h,
        t_max: a.t_max,
        scale_bins: a.scale_bins,
        envelope: a.envelope,
    };
    let cfg = accountant_config(&acc, 2.0)?;
    let r = accountant::solve_sigma(&cfg, a.eps.unwrap_or(2.0))?;
    eprintln!("sigma* = {} (eps {} at delta {}, {} probes)", sig6(r.sigma), sig6(r.eps_at_sigma), sig6(r.delta_tgt), r.probes);
    Ok(match format.unwrap_or(Format::Json) {
        Format::Json => json(&r),
        Format::Csv => csv_of(&r),
    })
}

job_args!(
    /// Toy DP-SGD-RC run on synthetic token regression.
    TrainArgs {
        /// Tokens per sequence [default: 16]
        tokens: usize,
        /// Input width d₀ [default: 16]
        width: usize,
        /// Hidden width d₁ [default: 8]
        hidden: usize,
        /// Training samples [default: 512]
        n: usize,
        /// Batch size [default: 32]
        batch: usize,
        /// Update steps [default: 64]
        steps: usize,
        /// Clipping threshold C [default: 1]
        clip: f64,
        /// Noise multiplier σ [default: 1]
        sigma: f64,
        /// Learning rate [default: 0.01]
        lr: f64,
        /// Norm routine: exact | ghost | hutch | hutchpp [default: hutch]
        routine: String,
        /// Sketch width k [default: 32]
        k: usize,
        /// Label noise stddev [default: 0.1]
        label_noise: f64,
    }
);

pub fn train(a: TrainArgs, seed: u64, format: Option<Format>) -> CliResult<String> {
    let width = a.width.unwrap_or(16);
    let task = SyntheticTask::new(a.tokens.unwrap_or(16), width, a.label_noise.unwrap_or(0.1), seed)?;
    let data = task.dataset(a.n.unwrap_or(512), seed);
    let model = ToyModel::init(&[width, a.hidden.unwrap_or(8), 1], &mut SeededStream::new(seed).substream(1))?;
    let cfg = TrainConfig {
        clip: a.clip.unwrap_or(1.0),
        sigma: a.sigma.unwrap_or(1.0),
        lr: a.lr.unwrap_or(0.01),
        batch: a.batch.unwrap_or(32),
        steps: a.steps.unwrap_or(64),
        routine: parse::<Routine>(a.routine.as_deref().unwrap_or("hutch"))?,
        k: a.k.unwrap_or(32),
        seed,
    };
    let out: TrainOutcome = trainer::train(model, &data, &cfg)?;
    if let (Some(first), Some(last)) = (out.loss_trace.first(), out.loss_trace.last()) {
        eprintln!("loss {} -> {} over {} steps ({})", sig6(*first), sig6(*last), cfg.steps, cfg.routine.as_str());
    }
    Ok(match format.unwrap_or(Format::Csv) {
        Format::Csv => format!("{}\n{}", TrainOutcome::CSV_HEADER, out.csv_rows()),
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                config: &'a TrainConfig,
                loss_trace: &'a [f64],
                clean_norm: Vec<f64>,
                noisy_norm: Vec<f64>,
            }
            json(&Out {
                config: &cfg,
                loss_trace: &out.loss_trace,
                clean_norm: out.records.iter().map(|r| r.clean_norm).collect(),
                noisy_norm: out.records.iter().map(|r| r.noisy_norm).collect(),
            })
        }
    })
}

job_args!(
    /// FLOPs and memory for FGC, GC and RC, plus the RC-wins context ranges.
    CostArgs {
        /// Batch size B [default: 2]
        b: u64,
        /// Context length T [default: 4096]
        t: u64,
        /// Layer output width p [default: 8192]
        p: u64,
        /// Layer input width d [default: 2048]
        d: u64,
        /// Sketch width k [default: 32]
        k: u64,
    }
);

pub fn cost(a: CostArgs, format: Option<Format>) -> CliResult<String> {
    let (b, t, p, d, k) = (a.b.unwrap_or(2), a.t.unwrap_or(4096), a.p.unwrap_or(8192), a.d.unwrap_or(2048), a.k.unwrap_or(32));
    let mut rows = Vec::new();
    for method in Method::ALL {
        for del in [false, true] {
            rows.push(CostParams { b, t, p, d, k, method, del_backprops: del });
        }
    }
    let ranges = costmodel::rc_wins_t_range(p.max(d), p.min(d), b, k)?;
    eprint!("{}", costmodel::regime_summary(p.max(d), p.min(d), b, k)?);
    Ok(match format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut out = format!("{}\n", costmodel::CSV_HEADER);
            for r in &rows {
                out.push_str(&costmodel::csv_row(r)?);
                out.push('\n');
            }
            out.push_str("\nregime,t_lo,t_hi\n");
            for r in &ranges {
                let _ = writeln!(out, "{},{},{}", r.label, r.t_lo, r.t_hi);
            }
            out
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Row {
                method: &'static str,
                del_backprops: bool,
                flops: String,
                mem_overhead: String,
                initial_memory: String,
            }
            #[derive(Serialize)]
            struct Out {
                b: u64,
                t: u64,
                p: u64,
                d: u64,
                k: u64,
                rows: Vec<Row>,
                regimes: Vec<costmodel::RegimeRange>,
            }
            let rows = rows
                .iter()
                .map(|r| {
                    Ok(Row {
                        method: r.method.as_str(),
                        del_backprops: r.del_backprops,
                        flops: costmodel::exact_flops(r)?.to_string(),
                        mem_overhead: costmodel::memory_overhead(r)?.to_string(),
                        initial_memory: costmodel::initial_memory(r)?.to_string(),
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            json(&Out { b, t, p, d, k, rows, regimes: ranges })
        }
    })
}
