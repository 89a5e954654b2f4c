//! `covest`: sampling design, masked covariance estimation, active
//! estimation, experiments and bound diagnostics from the command line.
//!
//! Results go to stdout or files; diagnostics go to stderr.

mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use covest::active::{run_active, ActiveConfig};
use covest::bounds::{bound_report, calibrate_gamma, h_norm_erank_bound, BoundParams};
use covest::data::{DataSource, ReplayOracle};
use covest::design::{DesignProblem, DEFAULT_FLOOR};
use covest::estimator::estimate_cov;
use covest::experiment::{self, Arm, ExperimentSpec, SourceSpec};
use covest::sampling::{MaskDistribution, MaskedSample};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

const SEED_ENV: &str = "COVEST_SEED";

#[derive(Parser)]
#[command(name = "covest", version, about = "Covariance estimation from randomly masked observations")]
struct Cli {
    /// Worker threads for parallel trials (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design sampling probabilities from a covariance diagonal.
    Design(DesignArgs),
    /// Estimate a covariance from masked samples (empty CSV cells are unobserved).
    Estimate(EstimateArgs),
    /// Run the adaptive estimation loop.
    Active(ActiveArgs),
    /// Run a multi-trial comparison and write CSV plus a JSON sidecar.
    Experiment(ExperimentArgs),
    /// Report the error bound for a covariance and design.
    Bound(BoundArgs),
    /// Fit the bound constant γ by simulation on Gaussian data.
    CalibrateGamma(CalibrateArgs),
}

#[derive(Args)]
struct DesignArgs {
    /// Covariance diagonal: a CSV file or inline values such as `4,1`.
    #[arg(long)]
    diag: String,
    /// Expected observed coordinates per sample, `m`.
    #[arg(long)]
    budget: f64,
    /// Probability floor.
    #[arg(long, default_value_t = DEFAULT_FLOOR)]
    eps: f64,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Masked samples, one per row; empty cells are unobserved coordinates.
    #[arg(long)]
    data: String,
    /// Probabilities the masks were drawn with (file or inline).
    #[arg(long)]
    p: String,
    /// Write the estimate as CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ActiveArgs {
    /// JSON config: the `active` fields below plus an optional `source`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Complete sample vectors, one per row, replayed in order; replaces
    /// any `source` in the config.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    floor: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the final estimate as CSV here.
    #[arg(long)]
    estimate_out: Option<PathBuf>,
    /// Write the JSON trace here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment spec.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated arms: uniform, designed, active, full.
    #[arg(long, value_delimiter = ',')]
    arms: Option<Vec<String>>,
    /// Comma-separated budgets as fractions of n.
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<f64>>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    q: Option<f64>,
    /// CSV path; the sidecar goes next to it. Without one the CSV goes to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BoundArgs {
    /// Covariance matrix CSV.
    #[arg(long)]
    sigma: String,
    /// Sampling probabilities (file or inline).
    #[arg(long)]
    p: String,
    /// Number of samples.
    #[arg(long = "T", alias = "samples")]
    samples: usize,
    #[arg(long, default_value_t = 100.0)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 2.0)]
    q: f64,
    /// Sub-Gaussian ratio σ.
    #[arg(long = "subgauss", default_value_t = 1.0)]
    subgauss: f64,
    /// Also require the effective-rank bound on `‖H‖_q` (needs q ≥ 2).
    #[arg(long)]
    erank_bound: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    sigma: String,
    #[arg(long)]
    p: String,
    #[arg(long = "T", alias = "samples")]
    samples: usize,
    #[arg(long, default_value_t = 100.0)]
    eta: f64,
    #[arg(long, default_value_t = 2.0)]
    q: f64,
    #[arg(long = "subgauss", default_value_t = 1.0)]
    subgauss: f64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Include the per-trial error ratios in the output.
    #[arg(long)]
    ratios: bool,
}

/// Flag, then environment, then fallback.
fn seed_or_env(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?} is not an integer"))?)),
        Err(_) => Ok(None),
    }
}

fn pretty(v: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn cmd_design(a: DesignArgs) -> Result<()> {
    let diag = io::read_vector(&a.diag)?;
    let problem = DesignProblem::from_diagonal(&diag, a.budget, a.eps)?;
    let sol = problem.solve()?;
    let out = json!({
        "p": sol.p.probs(),
        "rho": sol.rho,
        "objective": sol.objective,
        "kkt_residual": sol.kkt_residual(&problem),
        "iterations": sol.iterations,
        "converged": sol.converged,
        "budget": a.budget,
        "eps": a.eps,
    });
    io::emit(&pretty(&out)?, a.out.as_deref())
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let p = MaskDistribution::new(io::read_vector(&a.p)?)?;
    let n = p.dim();
    let rows = io::parse_rows(&io::read_source(&a.data)?)?;
    ensure!(!rows.is_empty(), "no samples in {}", a.data);
    let samples = rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            ensure!(row.len() == n, "sample {} has {} fields, expected {n}", r + 1, row.len());
            let mask: Vec<bool> = row.iter().map(Option::is_some).collect();
            let x = DVector::from_iterator(n, row.iter().map(|v| v.unwrap_or(0.0)));
            Ok(MaskedSample::new(mask, &x)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let est = estimate_cov(&samples, &p)?;
    eprintln!("estimated {n}×{n} covariance from {} samples", est.sample_count());
    io::emit(&io::matrix_csv(est.matrix()), a.out.as_deref())
}

/// Active-loop config file: [`ActiveConfig`] fields, all optional here so
/// flags can supply them, plus an optional data source.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActiveFile {
    source: Option<SourceSpec>,
    budget: Option<f64>,
    batch_size: Option<usize>,
    iterations: Option<usize>,
    floor: Option<f64>,
    seed: Option<u64>,
}

fn cmd_active(a: ActiveArgs) -> Result<()> {
    let mut file = match &a.config {
        Some(path) => serde_json::from_str::<ActiveFile>(
            &std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        )
        .with_context(|| format!("parsing {}", path.display()))?,
        None => ActiveFile::default(),
    };
    file.budget = a.budget.or(file.budget);
    file.batch_size = a.batch_size.or(file.batch_size);
    file.iterations = a.iterations.or(file.iterations);
    file.floor = a.floor.or(file.floor);
    file.seed = a.seed.or(file.seed);
    if file.seed.is_none() {
        file.seed = seed_or_env(None)?;
    }
    if a.data.is_some() {
        file.source = None;
    }
    let cfg = ActiveConfig {
        budget: file.budget.context("missing budget (--budget or config)")?,
        batch_size: file.batch_size.context("missing batch size (--batch-size or config)")?,
        iterations: file.iterations.context("missing iteration count (--iterations or config)")?,
        floor: file.floor.unwrap_or(DEFAULT_FLOOR),
        seed: file.seed.unwrap_or(0),
        record_estimates: false,
    };
    let total = cfg.batch_size * cfg.iterations;

    let (xs, truth): (Vec<DVector<f64>>, Option<DMatrix<f64>>) = match (&a.data, &file.source) {
        (Some(data), _) => (io::read_samples(data)?, None),
        (None, Some(spec)) => {
            let source: DataSource = spec.build()?;
            (source.sample_x(total, cfg.seed), Some(source.sigma()))
        }
        (None, None) => bail!("no data: pass --data or give a `source` in the config"),
    };
    let n = xs.first().map(|x| x.len()).context("no sample vectors")?;
    ensure!(xs.len() >= total, "{} samples available, {total} needed for {} × {}", xs.len(), cfg.iterations, cfg.batch_size);

    let trace = run_active(&mut ReplayOracle::new(&xs, n), &cfg, truth.as_ref())?;
    if let Some(path) = &a.estimate_out {
        io::emit(&io::matrix_csv(trace.estimate.matrix()), Some(path))?;
    }
    let records: Vec<Value> = trace
        .records
        .iter()
        .map(|r| {
            json!({
                "iteration": r.iteration,
                "samples_seen": r.samples_seen,
                "observed": r.observed,
                "rel_error": r.rel_error,
                "design": r.design.probs(),
            })
        })
        .collect();
    let out = json!({
        "config": {
            "source": file.source,
            "budget": cfg.budget,
            "batch_size": cfg.batch_size,
            "iterations": cfg.iterations,
            "floor": cfg.floor,
            "seed": cfg.seed,
        },
        "records": records,
        "final_design": trace.final_design.probs(),
        "estimate": trace.estimate.matrix().row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
    });
    io::emit(&pretty(&out)?, a.out.as_deref())
}

/// Loads the spec, applies flag overrides and fills the seed from the
/// environment when neither the file nor a flag gives one.
fn resolve_spec(a: &ExperimentArgs) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    let obj = value.as_object_mut().context("experiment config must be a JSON object")?;
    if let Some(seed) = a.seed {
        obj.insert("seed".into(), json!(seed));
    } else if !obj.contains_key("seed") {
        obj.insert("seed".into(), json!(seed_or_env(None)?.unwrap_or(0)));
    }
    let mut spec: ExperimentSpec =
        serde_json::from_value(value).with_context(|| format!("invalid experiment spec in {}", a.config.display()))?;
    if let Some(t) = a.trials {
        spec.trials = t;
    }
    if let Some(arms) = &a.arms {
        spec.arms = arms.iter().map(|s| s.parse::<Arm>()).collect::<covest::Result<_>>()?;
    }
    if let Some(b) = &a.budgets {
        spec.budgets = b.clone();
    }
    if let Some(b) = a.batch_size {
        spec.batch_size = b;
    }
    if let Some(i) = a.iterations {
        spec.iterations = i;
    }
    if let Some(q) = a.q {
        spec.q = q;
    }
    if let Some(o) = &a.output {
        spec.output = Some(o.clone());
    }
    Ok(spec)
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    let spec = resolve_spec(&a)?;
    let start = std::time::Instant::now();
    let result = experiment::run_experiment(&spec)?;
    eprintln!(
        "ran {} trials × {} curves (n = {}) in {:.1}s",
        spec.trials,
        result.curves.len(),
        result.n,
        start.elapsed().as_secs_f64()
    );
    match &spec.output {
        Some(path) => {
            let meta = experiment::export_all(&spec, &result, path)?;
            eprintln!("wrote {} and {}", path.display(), meta.display());
        }
        None => experiment::write_csv(&result, std::io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_bound(a: BoundArgs) -> Result<()> {
    let sigma = io::read_square(&a.sigma)?;
    let p = MaskDistribution::new(io::read_vector(&a.p)?)?;
    if a.erank_bound {
        // Fails for q < 2, where the effective-rank bound does not apply.
        h_norm_erank_bound(&sigma, &p, a.subgauss, a.q)?;
    }
    let params = BoundParams { sigma: a.subgauss, eta: a.eta, gamma: a.gamma, q: a.q };
    let report = bound_report(&sigma, &p, a.samples, &params)?;
    io::emit(&pretty(&report)?, None)
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let sigma = io::read_square(&a.sigma)?;
    let p = MaskDistribution::new(io::read_vector(&a.p)?)?;
    let seed = seed_or_env(a.seed)?.unwrap_or(0);
    let params = BoundParams { sigma: a.subgauss, eta: a.eta, gamma: 1.0, q: a.q };
    let fit = calibrate_gamma(&sigma, &p, a.samples, &params, a.trials, seed)?;
    let mut out = json!({
        "gamma": fit.gamma,
        "trials": fit.trials,
        "exceedances": fit.exceedances,
        "target_rate": 2.0 / a.eta,
        "samples": a.samples,
        "seed": seed,
    });
    if a.ratios {
        out["error_ratios"] = json!(fit.error_ratios);
    }
    io::emit(&pretty(&out)?, None)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        ensure!(jobs > 0, "--jobs must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    match cli.command {
        Command::Design(a) => cmd_design(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Active(a) => cmd_active(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Bound(a) => cmd_bound(a),
        Command::CalibrateGamma(a) => cmd_calibrate(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
