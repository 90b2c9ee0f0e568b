//! Command-line surface. Every command resolves its settings from built-in
//! defaults, an optional `--config` file and explicit flags (in increasing
//! precedence), runs, and records the resolved settings in a manifest.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use kpem_core::benchmark::{
    air_single, cod, generate_run, prior_correlation_demo, summarize, tap_magnitude_correlation, Metric,
};
use kpem_core::evidence::{laplace_nll, EvidenceConfig, HessianMode};
use kpem_core::kernels::{HyperParams, KernelKind};
use kpem_core::model::predict;
use kpem_core::pipeline::{estimate_sigma2, fit_with_clock, FitConfig, DEFAULT_ARX_ORDER};
use kpem_core::signals::Dataset;

use crate::config::{benchmark_config, benchmark_pairs, parse_list, Range, Settings, BENCHMARK_KEYS};
use crate::error::{Error, Result, EXIT_NUMERICAL, EXIT_OK};
use crate::formats::{
    dataset_to_csv, demo_to_csv, fmt_real, grid_to_csv, model_to_string, read_dataset, read_model, results_to_csv, summary_to_csv,
    timings_to_csv, trace_to_csv, write_atomic, GridRow, ModelFile,
};
use crate::manifest::Manifest;
use crate::runner::{monte_carlo_parallel, SystemClock};

#[derive(Debug, Parser)]
#[command(name = "kpem", version, about = "Kernel-regularized identification of high-order MAX models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random system with training and validation data.
    Simulate(SimulateArgs),
    /// Estimate a model from a `t,u,y` CSV file.
    Fit(FitArgs),
    /// Evaluate the approximate marginal likelihood over a hyperparameter grid.
    Evaluate(EvaluateArgs),
    /// Monte Carlo comparison of the kernel and baseline estimators.
    Benchmark(BenchmarkArgs),
    /// Impulse-response fit and validation COD of an estimate.
    Metrics(MetricsArgs),
    /// Forward impulse responses implied by independent predictor priors.
    CorrelationDemo(DemoArgs),
    /// Repeat the run recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Settings file (`key=value` per line); flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub order: Option<usize>,
    /// Dominant pole modulus range, `lo:hi`.
    #[arg(long)]
    pub poles: Option<Range>,
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long = "Nv")]
    pub n_v: Option<usize>,
    /// Signal-to-noise ratio; `inf` gives noiseless data.
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Square-wave period of the training input.
    #[arg(long)]
    pub period: Option<usize>,
    #[arg(long)]
    pub duty: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub hi: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training data, `t,u,y` CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// `tc` or `dc2`.
    #[arg(long)]
    pub kernel: Option<KernelKind>,
    #[arg(long = "T")]
    pub t: Option<usize>,
    /// Known noise variance; skips the ARX estimate.
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long = "arx-order")]
    pub arx_order: Option<usize>,
    /// Evidence evaluations allowed in the hyperparameter search.
    #[arg(long = "max-evals")]
    pub max_evals: Option<usize>,
    /// `exact` or `gauss-newton`.
    #[arg(long)]
    pub hessian: Option<HessianMode>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub kernel: Option<KernelKind>,
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long = "arx-order")]
    pub arx_order: Option<usize>,
    #[arg(long)]
    pub hessian: Option<HessianMode>,
    /// Comma separated values; the grid is the cartesian product of all lists.
    #[arg(long = "lambda-b")]
    pub lambda_b: Option<String>,
    #[arg(long = "lambda-c")]
    pub lambda_c: Option<String>,
    #[arg(long = "beta-b")]
    pub beta_b: Option<String>,
    #[arg(long = "beta-c")]
    pub beta_c: Option<String>,
    #[arg(long = "alpha-b")]
    pub alpha_b: Option<String>,
    #[arg(long = "alpha-c")]
    pub alpha_c: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `desk` (20 runs, order 20) or `full` (200 runs, order 40).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub poles: Option<Range>,
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long = "Nv")]
    pub n_v: Option<usize>,
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub period: Option<usize>,
    #[arg(long)]
    pub duty: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub hi: Option<f64>,
    #[arg(long = "baseline-max-order")]
    pub baseline_max_order: Option<usize>,
    /// Master seed; per-run seeds are derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma separated subset of tc,d2,pem-bic,pem-oracle.
    #[arg(long)]
    pub estimators: Option<String>,
    #[arg(long = "arx-order")]
    pub arx_order: Option<usize>,
    #[arg(long = "max-evals")]
    pub max_evals: Option<usize>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Truth file written by `simulate`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Model file written by `fit`.
    #[arg(long)]
    pub estimate: Option<PathBuf>,
    /// Validation data; enables COD.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Also write `metrics.csv` and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// TC decay rate of the `A` prior.
    #[arg(long = "beta-a")]
    pub beta_a: Option<f64>,
    /// TC decay rate of the `F` prior.
    #[arg(long = "beta-f")]
    pub beta_f: Option<f64>,
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn path_str(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| p.display().to_string())
}

impl Command {
    /// Command name and layered settings.
    pub fn into_settings(self) -> Result<(&'static str, Settings)> {
        match self {
            Command::Simulate(a) => {
                let mut s = Settings::load_optional(a.config.as_deref())?;
                s.flag("order", a.order);
                s.flag("poles", a.poles);
                s.flag("T", a.t);
                s.flag("N", a.n);
                s.flag("Nv", a.n_v);
                s.flag("snr", a.snr);
                s.flag("seed", a.seed);
                s.flag("period", a.period);
                s.flag("duty", a.duty);
                s.flag("lo", a.lo);
                s.flag("hi", a.hi);
                s.flag("out", path_str(a.out));
                Ok(("simulate", s))
            }
            Command::Fit(a) => {
                let mut s = Settings::load_optional(a.config.as_deref())?;
                s.flag("input", path_str(a.input));
                s.flag("kernel", a.kernel);
                s.flag("T", a.t);
                s.flag("sigma2", a.sigma2);
                s.flag("arx_order", a.arx_order);
                s.flag("max_evals", a.max_evals);
                s.flag("hessian", a.hessian.map(HessianMode::name));
                s.flag("out", path_str(a.out));
                Ok(("fit", s))
            }
            Command::Evaluate(a) => {
                let mut s = Settings::load_optional(a.config.as_deref())?;
                s.flag("input", path_str(a.input));
                s.flag("kernel", a.kernel);
                s.flag("T", a.t);
                s.flag("sigma2", a.sigma2);
                s.flag("arx_order", a.arx_order);
                s.flag("hessian", a.hessian.map(HessianMode::name));
                s.flag("lambda_b", a.lambda_b);
                s.flag("lambda_c", a.lambda_c);
                s.flag("beta_b", a.beta_b);
                s.flag("beta_c", a.beta_c);
                s.flag("alpha_b", a.alpha_b);
                s.flag("alpha_c", a.alpha_c);
                s.flag("out", path_str(a.out));
                Ok(("evaluate", s))
            }
            Command::Benchmark(a) => {
                let mut s = Settings::load_optional(a.config.as_deref())?;
                s.flag("preset", a.preset);
                s.flag("runs", a.runs);
                s.flag("order", a.order);
                s.flag("poles", a.poles);
                s.flag("T", a.t);
                s.flag("N", a.n);
                s.flag("Nv", a.n_v);
                s.flag("snr", a.snr);
                s.flag("period", a.period);
                s.flag("duty", a.duty);
                s.flag("lo", a.lo);
                s.flag("hi", a.hi);
                s.flag("baseline_max_order", a.baseline_max_order);
                s.flag("seed", a.seed);
                s.flag("estimators", a.estimators);
                s.flag("arx_order", a.arx_order);
                s.flag("max_evals", a.max_evals);
                s.flag("workers", a.workers);
                s.flag("out", path_str(a.out));
                Ok(("benchmark", s))
            }
            Command::Metrics(a) => {
                let mut s = Settings::load_optional(a.config.as_deref())?;
                s.flag("truth", path_str(a.truth));
                s.flag("estimate", path_str(a.estimate));
                s.flag("valid", path_str(a.valid));
                s.flag("out", path_str(a.out));
                Ok(("metrics", s))
            }
            Command::CorrelationDemo(a) => {
                let mut s = Settings::load_optional(a.config.as_deref())?;
                s.flag("beta_a", a.beta_a);
                s.flag("beta_f", a.beta_f);
                s.flag("T", a.t);
                s.flag("draws", a.draws);
                s.flag("seed", a.seed);
                s.flag("out", path_str(a.out));
                Ok(("correlation-demo", s))
            }
            Command::Replay(a) => {
                let mut s = Settings::load(&a.manifest)?;
                let command = match s.meta("command") {
                    Some("simulate") => "simulate",
                    Some("fit") => "fit",
                    Some("evaluate") => "evaluate",
                    Some("benchmark") => "benchmark",
                    Some("metrics") => "metrics",
                    Some("correlation-demo") => "correlation-demo",
                    other => {
                        return Err(Error::Usage(format!(
                            "{}: unknown or missing manifest.command {:?}",
                            a.manifest.display(),
                            other
                        )))
                    }
                };
                s.flag("out", path_str(a.out));
                Ok((command, s))
            }
        }
    }
}

/// Parses nothing; runs an already parsed command line. Returns the exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let (command, settings) = cli.command.into_settings()?;
    dispatch(command, &settings)
}

pub fn dispatch(command: &str, s: &Settings) -> Result<i32> {
    match command {
        "simulate" => cmd_simulate(s).map(|_| EXIT_OK),
        "fit" => cmd_fit(s).map(|_| EXIT_OK),
        "evaluate" => cmd_evaluate(s).map(|_| EXIT_OK),
        "benchmark" => cmd_benchmark(s),
        "metrics" => cmd_metrics(s).map(|_| EXIT_OK),
        "correlation-demo" => cmd_correlation_demo(s).map(|_| EXIT_OK),
        other => Err(Error::Usage(format!("unknown command `{other}`"))),
    }
}

fn out_dir(s: &Settings) -> Result<PathBuf> {
    let dir = s
        .path("out")
        .ok_or_else(|| Error::Usage("missing required setting `out` (output directory)".into()))?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_output(m: &mut Manifest, path: PathBuf, bytes: &[u8]) -> Result<()> {
    write_atomic(&path, bytes)?;
    m.outputs.push(path);
    Ok(())
}

fn required_path(s: &Settings, key: &str) -> Result<PathBuf> {
    s.path(key)
        .ok_or_else(|| Error::Usage(format!("missing required setting `{key}`")))
}

const SIMULATE_KEYS: &[&str] = &[
    "order", "poles", "T", "N", "Nv", "snr", "seed", "period", "duty", "lo", "hi", "out",
];

/// Run 0 of a benchmark with master seed `seed` uses exactly this data.
pub fn cmd_simulate(s: &Settings) -> Result<()> {
    s.check_keys(SIMULATE_KEYS)?;
    let mut layered = s.clone();
    layered.flag("preset", Some("full"));
    layered.flag("runs", Some(1));
    let cfg = benchmark_config(&layered)?;
    let dir = out_dir(s)?;
    let mut m = Manifest::begin("simulate");
    for (k, v) in benchmark_pairs(&cfg) {
        if SIMULATE_KEYS.contains(&k.as_str()) {
            m.set(&k, v);
        }
    }
    m.set("out", dir.display());

    let run = generate_run(&cfg, 0)?;
    write_output(&mut m, dir.join("train.csv"), &dataset_to_csv(&run.train.data))?;
    write_output(&mut m, dir.join("valid.csv"), &dataset_to_csv(&run.valid.data))?;
    let truth = ModelFile {
        t: cfg.t,
        sigma2: run.train.sigma2,
        eta: None,
        theta: run.system.theta(),
    };
    let comments = vec![
        "true system: b taps 0..T-1, c taps 1..T (c_0 = 1)".to_string(),
        format!("seed={} attempts={}", run.system.seed, run.system.attempts),
        format!(
            "train_snr={} valid_snr={} valid_sigma2={}",
            fmt_real(run.train.snr),
            fmt_real(run.valid.snr),
            fmt_real(run.valid.sigma2)
        ),
    ];
    write_output(&mut m, dir.join("truth.txt"), model_to_string(&truth, &comments).as_bytes())?;
    m.info("train_sigma2", fmt_real(run.train.sigma2));
    m.info("valid_sigma2", fmt_real(run.valid.sigma2));
    m.info("system_seed", run.system.seed);
    m.finish(&dir)?;
    println!(
        "simulated order {} system: N={} Nv={} sigma2={}",
        cfg.order, cfg.n, cfg.n_v, run.train.sigma2
    );
    Ok(())
}

const FIT_KEYS: &[&str] = &["input", "kernel", "T", "sigma2", "arx_order", "max_evals", "hessian", "out"];

pub fn cmd_fit(s: &Settings) -> Result<()> {
    s.check_keys(FIT_KEYS)?;
    let input = required_path(s, "input")?;
    let kind: KernelKind = s.get_or("kernel", KernelKind::Tc)?;
    let mut cfg = FitConfig::default();
    cfg.t = s.get_or("T", cfg.t)?;
    cfg.sigma2 = s.get("sigma2")?;
    cfg.search.nelder_mead.max_evals = s.get_or("max_evals", cfg.search.nelder_mead.max_evals)?;
    cfg.search.evidence.hessian = s.get_or("hessian", cfg.search.evidence.hessian)?;
    let data = read_dataset(&input)?;
    cfg.arx_order = s.get_or("arx_order", arx_order_for(data.len()))?;
    let dir = out_dir(s)?;

    let mut m = Manifest::begin("fit");
    m.set("input", input.display());
    m.set("kernel", kind.name());
    m.set("T", cfg.t);
    if let Some(s2) = cfg.sigma2 {
        m.set("sigma2", s2);
    }
    m.set("arx_order", cfg.arx_order);
    m.set("max_evals", cfg.search.nelder_mead.max_evals);
    m.set("hessian", cfg.search.evidence.hessian.name());
    m.set("out", dir.display());

    let clock = SystemClock::new();
    let f = fit_with_clock(&data, kind, &cfg, &clock)?;
    let model = ModelFile {
        t: cfg.t,
        sigma2: f.sigma2_hat,
        eta: Some(f.eta_hat),
        theta: f.theta_hat.clone(),
    };
    let comments = vec![
        format!(
            "evidence nll={} nll_relative={}",
            fmt_real(f.evidence.nll),
            fmt_real(f.evidence.nll_relative)
        ),
        format!(
            "search_converged={} evaluations={} final_solve={:?} iterations={}",
            f.search_converged,
            f.search_trace.len(),
            f.final_solve.termination,
            f.final_solve.iterations
        ),
        format!(
            "sigma2_source={}",
            if f.sigma2_estimate.is_some() { "arx" } else { "supplied" }
        ),
    ];
    write_output(&mut m, dir.join("model.txt"), model_to_string(&model, &comments).as_bytes())?;
    write_output(&mut m, dir.join("trace.csv"), &trace_to_csv(kind, &f.search_trace))?;
    m.info("sigma2_hat", fmt_real(f.sigma2_hat));
    m.info("sigma2_source", if f.sigma2_estimate.is_some() { "arx" } else { "override" });
    m.info("nll", fmt_real(f.evidence.nll));
    m.info("seconds_sigma2", format!("{:.3}", f.timings.sigma2));
    m.info("seconds_search", format!("{:.3}", f.timings.search));
    m.info("seconds_final", format!("{:.3}", f.timings.final_solve));
    m.finish(&dir)?;
    let eta: Vec<String> = f.eta_hat.values().iter().map(|v| format!("{v:.6e}")).collect();
    println!(
        "{} fit: sigma2={:.6e} eta=[{}] nll={:.6} evaluations={} converged={}",
        kind.name(),
        f.sigma2_hat,
        eta.join(", "),
        f.evidence.nll,
        f.search_trace.len(),
        f.search_converged && f.final_solve.converged
    );
    Ok(())
}

const EVALUATE_KEYS: &[&str] = &[
    "input", "kernel", "T", "sigma2", "arx_order", "hessian", "lambda_b", "lambda_c", "beta_b", "beta_c", "alpha_b",
    "alpha_c", "out",
];

const GRID_KEYS: [&str; 6] = ["lambda_b", "lambda_c", "beta_b", "beta_c", "alpha_b", "alpha_c"];

/// Cartesian product of the per-parameter lists, last parameter fastest.
pub fn eta_grid(kind: KernelKind, lists: &[Vec<f64>]) -> Result<Vec<HyperParams>> {
    if lists.len() != kind.arity() {
        return Err(Error::Usage(format!("{} takes {} hyperparameters", kind.name(), kind.arity())));
    }
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for list in lists {
        points = points
            .into_iter()
            .flat_map(|p| {
                list.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    let mut out = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let eta = crate::formats::eta_from_values(kind, p).expect("arity checked");
        eta.validate()
            .map_err(|e| Error::Usage(format!("grid point {i} {p:?} is outside the feasible set: {e}")))?;
        out.push(eta);
    }
    Ok(out)
}

/// Default ARX order, shrunk for short records so the fit stays determined.
fn arx_order_for(n: usize) -> usize {
    DEFAULT_ARX_ORDER.min(n.saturating_sub(1) / 4).max(1)
}

fn noise_variance(s: &Settings, data: &Dataset, default_order: usize) -> Result<(f64, bool)> {
    match s.get::<f64>("sigma2")? {
        Some(v) => Ok((v, true)),
        None => {
            let order = s.get_or("arx_order", default_order)?;
            Ok((estimate_sigma2(data, order)?.sigma2, false))
        }
    }
}

pub fn cmd_evaluate(s: &Settings) -> Result<()> {
    s.check_keys(EVALUATE_KEYS)?;
    let input = required_path(s, "input")?;
    let kind: KernelKind = s.get_or("kernel", KernelKind::Tc)?;
    let t: usize = s.get_or("T", 50)?;
    let hessian: HessianMode = s.get_or("hessian", HessianMode::default())?;
    let initial = HyperParams::initial(kind).values();
    let mut lists = Vec::new();
    for (i, key) in GRID_KEYS.iter().enumerate() {
        let given = s.raw(key);
        if i >= kind.arity() {
            if given.is_some() {
                return Err(Error::Usage(format!("`{key}` does not apply to the {} kernel", kind.name())));
            }
            continue;
        }
        lists.push(match given {
            Some(v) => parse_list::<f64>(v).map_err(|e| Error::Usage(format!("{key}: {e}")))?,
            None => vec![initial[i]],
        });
    }
    let grid = eta_grid(kind, &lists)?;
    let data = read_dataset(&input)?;
    let arx_order: usize = s.get_or("arx_order", arx_order_for(data.len()))?;
    let (sigma2, supplied) = noise_variance(s, &data, arx_order)?;
    let dir = out_dir(s)?;

    let mut m = Manifest::begin("evaluate");
    m.set("input", input.display());
    m.set("kernel", kind.name());
    m.set("T", t);
    if supplied {
        m.set("sigma2", sigma2);
    }
    m.set("arx_order", arx_order);
    m.set("hessian", hessian.name());
    for (key, list) in GRID_KEYS.iter().zip(&lists) {
        let v: Vec<String> = list.iter().map(f64::to_string).collect();
        m.set(key, v.join(","));
    }
    m.set("out", dir.display());

    let cfg = EvidenceConfig {
        hessian,
        ..EvidenceConfig::default()
    };
    let mut rows = Vec::with_capacity(grid.len());
    for (i, eta) in grid.iter().enumerate() {
        let ev = laplace_nll(eta, t, &data, sigma2, None, &cfg)
            .map_err(|e| Error::context(format!("grid point {i}"), e.into()))?;
        rows.push(GridRow { eta: *eta, evidence: ev });
    }
    write_output(&mut m, dir.join("evidence.csv"), &grid_to_csv(kind, &rows))?;
    m.info("sigma2_hat", fmt_real(sigma2));
    m.info("points", rows.len());
    m.finish(&dir)?;
    let best = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.evidence.nll.total_cmp(&b.1.evidence.nll))
        .map(|(i, r)| (i, r.evidence.nll));
    if let Some((i, nll)) = best {
        println!("{} points evaluated; minimum nll {nll:.6} at index {i}", rows.len());
    }
    Ok(())
}

pub fn cmd_benchmark(s: &Settings) -> Result<i32> {
    s.check_keys(BENCHMARK_KEYS)?;
    let cfg = benchmark_config(s)?;
    let default_workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let workers: usize = s.get_or("workers", default_workers)?;
    let dir = out_dir(s)?;
    let mut m = Manifest::begin("benchmark");
    for (k, v) in benchmark_pairs(&cfg) {
        m.set(&k, v);
    }
    m.set("workers", workers);
    m.set("out", dir.display());

    let outcomes = monte_carlo_parallel(&cfg, workers)?;
    write_output(&mut m, dir.join("results.csv"), &results_to_csv(&outcomes))?;
    write_output(&mut m, dir.join("timings.csv"), &timings_to_csv(&outcomes))?;
    let air = summarize(&outcomes, &cfg.estimators, Metric::Air);
    let codv = summarize(&outcomes, &cfg.estimators, Metric::Cod);
    write_output(&mut m, dir.join("summary_air.csv"), &summary_to_csv(&air))?;
    write_output(&mut m, dir.join("summary_cod.csv"), &summary_to_csv(&codv))?;
    let failed = outcomes.iter().filter(|o| o.error.is_some()).count();
    m.info("failed_fits", failed);
    m.finish(&dir)?;

    println!("{:<12} {:>10} {:>10} {:>9}", "estimator", "median AIR", "median COD", "outliers");
    for ((est, a), (_, c)) in air.iter().zip(&codv) {
        let med = |x: &Option<kpem_core::benchmark::BoxStats>| x.map_or(f64::NAN, |s| s.median);
        println!(
            "{:<12} {:>10.3} {:>10.3} {:>9}",
            est.name(),
            med(a),
            med(c),
            a.map_or(0, |s| s.n_outliers)
        );
    }
    println!("{} fits, {} failed", outcomes.len(), failed);
    if !outcomes.is_empty() && failed == outcomes.len() {
        eprintln!("error: every fit failed");
        return Ok(EXIT_NUMERICAL);
    }
    Ok(EXIT_OK)
}

/// AIR of `b`, `c`, their mean, and validation COD when data is given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub air_b: f64,
    pub air_c: f64,
    pub air: f64,
    pub cod: Option<f64>,
}

pub fn compute_metrics(truth: &ModelFile, estimate: &ModelFile, valid: Option<&Dataset>) -> Result<Metrics> {
    let t = truth.t;
    if truth.theta.nb() != t || truth.theta.nc() != t {
        return Err(Error::Data(format!("truth file must hold {t} b and c taps")));
    }
    if estimate.t != t {
        return Err(Error::Data(format!("estimate has T = {}, truth has T = {t}", estimate.t)));
    }
    let p = estimate.theta.padded(t);
    let air_b = air_single(truth.theta.b(), &p.b()[..t])?;
    let air_c = air_single(truth.theta.c(), &p.c()[..t])?;
    let cod = match valid {
        Some(v) => {
            let y_hat = predict(&estimate.theta, v)?;
            Some(cod(v.y(), y_hat.values())?)
        }
        None => None,
    };
    Ok(Metrics {
        air_b,
        air_c,
        air: 0.5 * (air_b + air_c),
        cod,
    })
}

const METRICS_KEYS: &[&str] = &["truth", "estimate", "valid", "out"];

pub fn cmd_metrics(s: &Settings) -> Result<()> {
    s.check_keys(METRICS_KEYS)?;
    let truth_path = required_path(s, "truth")?;
    let est_path = required_path(s, "estimate")?;
    let truth = read_model(&truth_path)?;
    let estimate = read_model(&est_path)?;
    let valid_path = s.path("valid");
    let valid = valid_path.as_deref().map(read_dataset).transpose()?;
    let r = compute_metrics(&truth, &estimate, valid.as_ref())?;

    println!("air_b={}", fmt_real(r.air_b));
    println!("air_c={}", fmt_real(r.air_c));
    println!("air={}", fmt_real(r.air));
    if let Some(c) = r.cod {
        println!("cod={}", fmt_real(c));
    }
    if s.raw("out").is_some() {
        let dir = out_dir(s)?;
        let mut m = Manifest::begin("metrics");
        m.set("truth", truth_path.display());
        m.set("estimate", est_path.display());
        if let Some(v) = &valid_path {
            m.set("valid", v.display());
        }
        m.set("out", dir.display());
        let mut text = String::from("metric,value\n");
        text.push_str(&format!("air_b,{}\nair_c,{}\nair,{}\n", fmt_real(r.air_b), fmt_real(r.air_c), fmt_real(r.air)));
        if let Some(c) = r.cod {
            text.push_str(&format!("cod,{}\n", fmt_real(c)));
        }
        write_output(&mut m, dir.join("metrics.csv"), text.as_bytes())?;
        m.finish(&dir)?;
    }
    Ok(())
}

const DEMO_KEYS: &[&str] = &["beta_a", "beta_f", "T", "draws", "seed", "out"];

pub fn cmd_correlation_demo(s: &Settings) -> Result<()> {
    s.check_keys(DEMO_KEYS)?;
    let beta_a: f64 = s.get_or("beta_a", 0.6)?;
    let beta_f: f64 = s.get_or("beta_f", 0.5)?;
    let t: usize = s.get_or("T", 50)?;
    let draws: usize = s.get_or("draws", 500)?;
    let seed: u64 = s.get_or("seed", 1)?;
    let dir = out_dir(s)?;
    let mut m = Manifest::begin("correlation-demo");
    m.set("beta_a", beta_a);
    m.set("beta_f", beta_f);
    m.set("T", t);
    m.set("draws", draws);
    m.set("seed", seed);
    m.set("out", dir.display());

    let d = prior_correlation_demo(beta_a, beta_f, t, draws, seed)?;
    let unstable = d.iter().filter(|x| x.unstable).count();
    let corr = tap_magnitude_correlation(&d);
    write_output(&mut m, dir.join("demo.csv"), &demo_to_csv(&d))?;
    m.info("correlation", fmt_real(corr));
    m.info("unstable_draws", unstable);
    m.finish(&dir)?;
    println!("draws={draws} unstable={unstable} tap_magnitude_correlation={corr:.6}");
    Ok(())
}
