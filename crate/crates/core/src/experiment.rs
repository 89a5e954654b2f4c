//! Multi-trial comparison of sampling strategies.
//!
//! Arms:
//!
//! * `uniform`: fixed `p_i = m/n`;
//! * `designed`: fixed `p` designed from the true covariance;
//! * `active`: the adaptive loop of [`crate::active`];
//! * `full`: every coordinate observed (`m = n`), the reference curve.
//!
//! Within a trial all arms and budgets see the same stream of unmasked
//! vectors; only the masks differ. Errors are checkpointed after every batch
//! of `B` samples, so every arm shares the same grid of sample counts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::{run_active, run_fixed, ActiveConfig, FixedConfig};
use crate::bounds::{bound_report, BoundParams, BoundReport};
use crate::data::{build_empirical_source, load_idx, DataSource, ReplayOracle, SyntheticModel};
use crate::design::{design_probabilities, DEFAULT_FLOOR};
use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::sampling::MaskDistribution;
use crate::stats::mean_std;

pub const CSV_HEADER: [&str; 7] =
    ["arm", "budget_frac", "checkpoint_T", "mean_rel_err", "std_rel_err", "trials", "seed"];

/// Noise level, either a number or an expression `"k/n"` in the dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Theta {
    Value(f64),
    PerDim(String),
}

impl Theta {
    pub fn resolve(&self, n: usize) -> Result<f64> {
        match self {
            Theta::Value(v) => Ok(*v),
            Theta::PerDim(expr) => {
                let num = expr
                    .trim()
                    .strip_suffix("/n")
                    .ok_or_else(|| invalid(format!("θ expression must look like \"k/n\", got {expr:?}")))?;
                let k: f64 = num
                    .trim()
                    .parse()
                    .map_err(|_| invalid(format!("bad θ numerator in {expr:?}")))?;
                Ok(k / n as f64)
            }
        }
    }
}

/// Where the unmasked vectors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    /// Spiked Gaussian model, see [`SyntheticModel::spiked`].
    Synthetic {
        n: usize,
        spikes: usize,
        spike: f64,
        theta: Theta,
        #[serde(default)]
        model_seed: u64,
    },
    /// IDX image/label files, restricted to one digit.
    Idx { images: PathBuf, labels: PathBuf, digit: u8, theta: Theta },
}

impl SourceSpec {
    pub fn build(&self) -> Result<DataSource> {
        match self {
            SourceSpec::Synthetic { n, spikes, spike, theta, model_seed } => Ok(DataSource::Synthetic(
                SyntheticModel::spiked(*n, *spikes, *spike, theta.resolve(*n)?, *model_seed)?,
            )),
            SourceSpec::Idx { images, labels, digit, theta } => {
                for path in [images, labels] {
                    if !path.is_file() {
                        return Err(Error::MissingDataset(path.display().to_string()));
                    }
                }
                let images = load_idx(images)?;
                let labels = load_idx(labels)?;
                let n = images.item_len();
                Ok(DataSource::Empirical(build_empirical_source(&images, &labels, *digit, theta.resolve(n)?)?))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Active,
    Designed,
    Full,
    Uniform,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Active => "active",
            Arm::Designed => "designed",
            Arm::Full => "full",
            Arm::Uniform => "uniform",
        }
    }

    fn stream_tag(self) -> u64 {
        match self {
            Arm::Active => 1,
            Arm::Designed => 2,
            Arm::Full => 3,
            Arm::Uniform => 4,
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "active" => Ok(Arm::Active),
            "designed" => Ok(Arm::Designed),
            "full" => Ok(Arm::Full),
            "uniform" => Ok(Arm::Uniform),
            other => Err(invalid(format!("unknown arm {other:?}"))),
        }
    }
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR
}

fn default_q() -> f64 {
    2.0
}

/// Declarative description of a comparison run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub source: SourceSpec,
    pub arms: Vec<Arm>,
    /// Budgets as fractions of `n`; `m = frac · n`.
    pub budgets: Vec<f64>,
    pub batch_size: usize,
    pub iterations: usize,
    pub trials: usize,
    pub seed: u64,
    /// Norm order for the bound diagnostics.
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
    #[serde(default)]
    pub bound: Option<BoundParams>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn total_samples(&self) -> usize {
        self.batch_size * self.iterations
    }

    fn bound_params(&self) -> BoundParams {
        BoundParams { q: self.q, ..self.bound.unwrap_or_default() }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.trials == 0 || self.batch_size == 0 || self.iterations == 0 {
            return Err(invalid("trials, batch_size and iterations must be positive"));
        }
        if self.arms.is_empty() {
            return Err(invalid("no arms requested"));
        }
        if self.budgets.is_empty() && self.arms.iter().any(|&a| a != Arm::Full) {
            return Err(invalid("no budgets given"));
        }
        for &frac in &self.budgets {
            let m = frac * n as f64;
            if !(frac > 0.0 && frac <= 1.0) || m < n as f64 * self.floor - 1e-12 {
                return Err(Error::InfeasibleBudget { budget: m, n, lo: self.floor, hi: 1.0 });
            }
        }
        if !(self.q >= 1.0) {
            return Err(invalid(format!("norm order q must be at least 1, got {}", self.q)));
        }
        Ok(())
    }

    /// `(arm, budget fraction)` pairs in run order; `full` runs once at 1.0.
    fn cells(&self) -> Vec<(Arm, f64)> {
        let mut arms = self.arms.clone();
        arms.sort();
        arms.dedup();
        let mut cells = Vec::new();
        for arm in arms {
            if arm == Arm::Full {
                cells.push((arm, 1.0));
            } else {
                cells.extend(self.budgets.iter().map(|&b| (arm, b)));
            }
        }
        cells
    }
}

/// Error statistics for one `(arm, budget)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmCurve {
    pub arm: Arm,
    pub budget_frac: f64,
    pub checkpoints: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Relative errors, `trial_errors[trial][checkpoint]`.
    pub trial_errors: Vec<Vec<f64>>,
    /// Design used by the last batch, averaged over trials for `active`.
    pub final_design: Vec<f64>,
    /// Bound diagnostics at the final sample count for `final_design`.
    pub bound: Option<BoundReport>,
}

impl ArmCurve {
    pub fn final_mean(&self) -> f64 {
        *self.mean.last().expect("curves have at least one checkpoint")
    }

    /// Per-trial errors at the last checkpoint.
    pub fn final_errors(&self) -> Vec<f64> {
        self.trial_errors.iter().map(|e| *e.last().expect("nonempty")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub n: usize,
    pub seed: u64,
    pub trials: usize,
    pub curves: Vec<ArmCurve>,
}

impl ExperimentResult {
    pub fn curve(&self, arm: Arm, budget_frac: f64) -> Option<&ArmCurve> {
        self.curves.iter().find(|c| c.arm == arm && (c.budget_frac - budget_frac).abs() < 1e-12)
    }
}

struct TrialCell {
    errors: Vec<f64>,
    checkpoints: Vec<usize>,
    final_design: Vec<f64>,
}

fn run_trial(
    spec: &ExperimentSpec,
    source: &DataSource,
    sigma: &DMatrix<f64>,
    designs: &[Option<MaskDistribution>],
    trial: usize,
) -> Result<Vec<TrialCell>> {
    let n = source.dim();
    let trial_seed = rng::derive_seed(spec.seed, &[rng::tag::TRIAL, trial as u64]);
    let xs = source.sample_x(spec.total_samples(), trial_seed);
    spec.cells()
        .iter()
        .zip(designs)
        .enumerate()
        .map(|(cell, (&(arm, frac), design))| {
            let mask_seed = rng::derive_seed(trial_seed, &[arm.stream_tag(), cell as u64]);
            let mut oracle = ReplayOracle::new(&xs, n);
            let trace = match arm {
                Arm::Active => {
                    let cfg = ActiveConfig {
                        budget: frac * n as f64,
                        batch_size: spec.batch_size,
                        iterations: spec.iterations,
                        floor: spec.floor,
                        seed: mask_seed,
                        record_estimates: false,
                    };
                    run_active(&mut oracle, &cfg, Some(sigma))?
                }
                _ => {
                    let p = design.as_ref().expect("fixed arms carry a design");
                    let cfg = FixedConfig {
                        total: spec.total_samples(),
                        batch_size: spec.batch_size,
                        seed: mask_seed,
                        record_estimates: false,
                    };
                    run_fixed(&mut oracle, p, &cfg, Some(sigma))?
                }
            };
            let last_design = trace.records.last().map(|r| r.design.probs().to_vec()).unwrap_or_default();
            Ok(TrialCell {
                errors: trace.errors(),
                checkpoints: trace.checkpoints(),
                final_design: last_design,
            })
        })
        .collect()
}

/// Runs every trial (in parallel on the current rayon pool) and aggregates
/// in trial order, so the result depends only on the spec.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let source = spec.source.build()?;
    run_experiment_on(spec, &source)
}

/// [`run_experiment`] with a prebuilt source; `spec.source` is ignored.
pub fn run_experiment_on(spec: &ExperimentSpec, source: &DataSource) -> Result<ExperimentResult> {
    let n = source.dim();
    spec.validate(n)?;
    let sigma = source.sigma();
    let cells = spec.cells();
    let designs = cells
        .iter()
        .map(|&(arm, frac)| {
            let m = frac * n as f64;
            match arm {
                Arm::Uniform => MaskDistribution::uniform(n, m).map(Some),
                Arm::Full => MaskDistribution::full(n).map(Some),
                Arm::Designed => {
                    let diag: Vec<f64> = sigma.diagonal().iter().copied().collect();
                    design_probabilities(&diag, m, spec.floor).map(|s| Some(s.p))
                }
                Arm::Active => Ok(None),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let per_trial = (0..spec.trials)
        .into_par_iter()
        .map(|r| run_trial(spec, source, &sigma, &designs, r))
        .collect::<Result<Vec<_>>>()?;

    let params = spec.bound_params();
    let total = spec.total_samples();
    let mut curves = Vec::with_capacity(cells.len());
    for (c, &(arm, frac)) in cells.iter().enumerate() {
        let checkpoints = per_trial[0][c].checkpoints.clone();
        let trial_errors: Vec<Vec<f64>> = per_trial.iter().map(|t| t[c].errors.clone()).collect();
        let (mean, std): (Vec<f64>, Vec<f64>) = (0..checkpoints.len())
            .map(|k| mean_std(&trial_errors.iter().map(|e| e[k]).collect::<Vec<_>>()))
            .unzip();
        let mut final_design = vec![0.0; n];
        for t in &per_trial {
            for (acc, v) in final_design.iter_mut().zip(&t[c].final_design) {
                *acc += v / spec.trials as f64;
            }
        }
        let bound = MaskDistribution::new(final_design.clone())
            .ok()
            .and_then(|p| bound_report(&sigma, &p, total, &params).ok());
        curves.push(ArmCurve {
            arm,
            budget_frac: frac,
            checkpoints,
            mean,
            std,
            trial_errors,
            final_design,
            bound,
        });
    }
    Ok(ExperimentResult { n, seed: spec.seed, trials: spec.trials, curves })
}

fn fmt12(v: f64) -> String {
    format!("{v:.11e}")
}

/// Writes the long-format CSV, rows sorted by `(arm, budget, checkpoint)`.
pub fn write_csv<W: Write>(result: &ExperimentResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    let mut curves: Vec<&ArmCurve> = result.curves.iter().collect();
    curves.sort_by(|a, b| a.arm.cmp(&b.arm).then(a.budget_frac.total_cmp(&b.budget_frac)));
    for c in curves {
        let mut rows: Vec<usize> = (0..c.checkpoints.len()).collect();
        rows.sort_by_key(|&k| c.checkpoints[k]);
        for k in rows {
            w.write_record([
                c.arm.name().to_string(),
                fmt12(c.budget_frac),
                c.checkpoints[k].to_string(),
                fmt12(c.mean[k]),
                fmt12(c.std[k]),
                c.trial_errors.len().to_string(),
                result.seed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(result: &ExperimentResult, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    write_csv(result, std::io::BufWriter::new(file))
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CsvRow {
    pub arm: Arm,
    pub budget_frac: f64,
    #[serde(rename = "checkpoint_T")]
    pub checkpoint_t: usize,
    pub mean_rel_err: f64,
    pub std_rel_err: f64,
    pub trials: usize,
    pub seed: u64,
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(invalid(format!("unexpected CSV header {headers:?}")));
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<CsvRow>, _>>()?)
}

/// Contents of the JSON sidecar written next to the CSV.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata<'a> {
    pub spec: &'a ExperimentSpec,
    pub library: &'static str,
    pub version: &'static str,
    pub n: usize,
    pub master_seed: u64,
    pub trial_seeds: Vec<u64>,
    /// Arms share the unmasked vectors of each trial.
    pub pairing: &'static str,
    pub checkpoint_unit: &'static str,
    /// Checkpoints expressed as `T/n`.
    pub checkpoints_over_n: Vec<f64>,
    pub final_designs: Vec<FinalDesign<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalDesign<'a> {
    pub arm: Arm,
    pub budget_frac: f64,
    pub p: &'a [f64],
    pub bound: Option<&'a BoundReport>,
}

pub fn metadata<'a>(spec: &'a ExperimentSpec, result: &'a ExperimentResult) -> Metadata<'a> {
    let checkpoints = result.curves.first().map(|c| c.checkpoints.clone()).unwrap_or_default();
    Metadata {
        spec,
        library: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        n: result.n,
        master_seed: spec.seed,
        trial_seeds: (0..spec.trials)
            .map(|r| rng::derive_seed(spec.seed, &[rng::tag::TRIAL, r as u64]))
            .collect(),
        pairing: "shared-x-per-trial",
        checkpoint_unit: "samples",
        checkpoints_over_n: checkpoints.iter().map(|&t| t as f64 / result.n as f64).collect(),
        final_designs: result
            .curves
            .iter()
            .map(|c| FinalDesign {
                arm: c.arm,
                budget_frac: c.budget_frac,
                p: &c.final_design,
                bound: c.bound.as_ref(),
            })
            .collect(),
        extra: None,
    }
}

/// Sidecar path for a CSV path: `results.csv` → `results.meta.json`.
pub fn metadata_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Writes the CSV and its metadata sidecar.
pub fn export_all(spec: &ExperimentSpec, result: &ExperimentResult, csv_path: &Path) -> Result<PathBuf> {
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    export_csv(result, csv_path)?;
    let meta = metadata_path(csv_path);
    fs::write(&meta, serde_json::to_string_pretty(&metadata(spec, result))?)?;
    Ok(meta)
}
