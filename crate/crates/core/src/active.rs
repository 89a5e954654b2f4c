//! Batch active covariance estimation.
//!
//! Starting from uniform probabilities `p⁽⁰⁾ = (m/n) 1`, each iteration `t`
//!
//! 1. draws `B` vectors and masks them under `p⁽ᵗ⁾` (frozen for the batch),
//! 2. forms the batch estimate with `Ξ†` built from `p⁽ᵗ⁾`,
//! 3. merges it into the running estimate with weights `1/(t+1)` and `t/(t+1)`,
//! 4. redesigns `p⁽ᵗ⁺¹⁾` from the diagonal of the running estimate.
//!
//! Every batch estimate is conditionally unbiased given the past, so the
//! running estimate is unbiased for any redesign rule that depends only on
//! past data.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::SampleOracle;
use crate::design::{update_design, DEFAULT_FLOOR};
use crate::error::{invalid, Error, Result};
use crate::estimator::{merge_estimates, relative_frobenius_error, CovAccumulator, CovarianceEstimate};
use crate::rng;
use crate::sampling::{mask_sample, MaskDistribution};

/// Parameters of the active loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveConfig {
    /// Expected observed coordinates per sample, `m`.
    pub budget: f64,
    /// Samples per iteration, `B`.
    pub batch_size: usize,
    /// Number of iterations, `N`.
    pub iterations: usize,
    /// Probability floor `ε`.
    #[serde(default = "default_floor")]
    pub floor: f64,
    /// Master seed for the mask streams.
    pub seed: u64,
    /// Keep batch and merged matrices in the trace.
    #[serde(default)]
    pub record_estimates: bool,
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR
}

impl ActiveConfig {
    pub fn new(budget: f64, batch_size: usize, iterations: usize, seed: u64) -> Self {
        Self { budget, batch_size, iterations, floor: DEFAULT_FLOOR, seed, record_estimates: false }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(invalid("batch size and iteration count must be positive"));
        }
        let nf = n as f64;
        let slack = 1e-12 * nf.max(1.0);
        if !(self.floor >= 0.0) || !(self.budget > 0.0)
            || self.budget < nf * self.floor - slack
            || self.budget > nf + slack
        {
            return Err(Error::InfeasibleBudget { budget: self.budget, n, lo: self.floor, hi: 1.0 });
        }
        Ok(())
    }
}

/// How `p⁽ᵗ⁺¹⁾` is chosen from the running estimate.
pub trait UpdateRule {
    fn next_design(
        &self,
        merged: &CovarianceEstimate,
        current: &MaskDistribution,
        cfg: &ActiveConfig,
    ) -> Result<MaskDistribution>;
}

/// Redesign from the running estimate's diagonal.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmpiricalDesign;

impl UpdateRule for EmpiricalDesign {
    fn next_design(
        &self,
        merged: &CovarianceEstimate,
        _current: &MaskDistribution,
        cfg: &ActiveConfig,
    ) -> Result<MaskDistribution> {
        Ok(update_design(merged, cfg.budget, cfg.floor)?.p)
    }
}

/// Keeps the current design.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenDesign;

impl UpdateRule for FrozenDesign {
    fn next_design(
        &self,
        _merged: &CovarianceEstimate,
        current: &MaskDistribution,
        _cfg: &ActiveConfig,
    ) -> Result<MaskDistribution> {
        Ok(current.clone())
    }
}

impl<F> UpdateRule for F
where
    F: Fn(&CovarianceEstimate, &MaskDistribution) -> Result<MaskDistribution>,
{
    fn next_design(
        &self,
        merged: &CovarianceEstimate,
        current: &MaskDistribution,
        _cfg: &ActiveConfig,
    ) -> Result<MaskDistribution> {
        self(merged, current)
    }
}

/// One checkpoint of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Design the batch was drawn under.
    pub design: MaskDistribution,
    /// Total samples consumed up to and including this batch.
    pub samples_seen: usize,
    /// Coordinates actually observed in this batch.
    pub observed: usize,
    /// Relative Frobenius error of the running estimate, when the truth is known.
    pub rel_error: Option<f64>,
    pub batch: Option<CovarianceEstimate>,
    pub merged: Option<CovarianceEstimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveTrace {
    pub records: Vec<IterationRecord>,
    /// Running estimate after the last batch.
    pub estimate: CovarianceEstimate,
    /// Design the next batch would have used.
    pub final_design: MaskDistribution,
}

impl ActiveTrace {
    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.rel_error).collect()
    }

    pub fn checkpoints(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.samples_seen).collect()
    }
}

fn check_truth(truth: Option<&DMatrix<f64>>, n: usize) -> Result<()> {
    match truth {
        Some(t) if t.shape() != (n, n) => Err(Error::DimensionMismatch { expected: n, got: t.nrows() }),
        _ => Ok(()),
    }
}

fn masked_batch<O: SampleOracle + ?Sized>(
    oracle: &mut O,
    p: &MaskDistribution,
    count: usize,
    seed: u64,
    batch: usize,
) -> Result<CovAccumulator> {
    let mut masks = rng::stream(seed, &[rng::tag::MASK, batch as u64]);
    let mut acc = CovAccumulator::new(p.dim());
    for x in oracle.draw(count)? {
        acc.push(&mask_sample(&x, p, &mut masks)?)?;
    }
    Ok(acc)
}

/// Runs the active loop with the default redesign rule.
pub fn run_active<O: SampleOracle + ?Sized>(
    oracle: &mut O,
    cfg: &ActiveConfig,
    truth: Option<&DMatrix<f64>>,
) -> Result<ActiveTrace> {
    run_active_with(oracle, cfg, truth, &EmpiricalDesign)
}

/// Runs the active loop with a custom redesign rule.
pub fn run_active_with<O, U>(
    oracle: &mut O,
    cfg: &ActiveConfig,
    truth: Option<&DMatrix<f64>>,
    rule: &U,
) -> Result<ActiveTrace>
where
    O: SampleOracle + ?Sized,
    U: UpdateRule + ?Sized,
{
    let n = oracle.dim();
    cfg.validate(n)?;
    check_truth(truth, n)?;

    let mut p = MaskDistribution::uniform(n, cfg.budget)?;
    let mut estimate = CovarianceEstimate::zeros(n);
    let mut records = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let acc = masked_batch(oracle, &p, cfg.batch_size, cfg.seed, t)?;
        let batch = acc.finish(&p)?;
        let merged = merge_estimates(&estimate, &batch)?;
        let rel_error = truth.map(|s| relative_frobenius_error(merged.matrix(), s)).transpose()?;
        let next = rule.next_design(&merged, &p, cfg)?;
        if next.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: next.dim() });
        }
        records.push(IterationRecord {
            iteration: t,
            design: p,
            samples_seen: merged.sample_count(),
            observed: acc.observed_coordinates(),
            rel_error,
            batch: cfg.record_estimates.then_some(batch),
            merged: cfg.record_estimates.then(|| merged.clone()),
        });
        estimate = merged;
        p = next;
    }
    Ok(ActiveTrace { records, estimate, final_design: p })
}

/// Schedule for a fixed-design run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedConfig {
    /// Total samples `T`.
    pub total: usize,
    /// Checkpoint spacing; the last batch may be shorter.
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub record_estimates: bool,
}

/// Non-adaptive counterpart of [`run_active`]: every sample is masked under
/// the same `p` and the running estimate is the plain estimator over all
/// samples so far, checkpointed after every batch.
///
/// Mask streams are derived exactly as in [`run_active`], so with the same
/// seed and a frozen uniform design both see identical masks.
pub fn run_fixed<O: SampleOracle + ?Sized>(
    oracle: &mut O,
    p: &MaskDistribution,
    cfg: &FixedConfig,
    truth: Option<&DMatrix<f64>>,
) -> Result<ActiveTrace> {
    let n = oracle.dim();
    if p.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: p.dim() });
    }
    if cfg.total == 0 || cfg.batch_size == 0 {
        return Err(invalid("total samples and batch size must be positive"));
    }
    check_truth(truth, n)?;

    let mut total = CovAccumulator::new(n);
    let mut records = Vec::new();
    let mut t = 0;
    while total.count() < cfg.total {
        let size = cfg.batch_size.min(cfg.total - total.count());
        let acc = masked_batch(oracle, p, size, cfg.seed, t)?;
        total.merge(&acc)?;
        let running = total.finish(p)?;
        let rel_error = truth.map(|s| relative_frobenius_error(running.matrix(), s)).transpose()?;
        records.push(IterationRecord {
            iteration: t,
            design: p.clone(),
            samples_seen: total.count(),
            observed: acc.observed_coordinates(),
            rel_error,
            batch: if cfg.record_estimates { Some(acc.finish(p)?) } else { None },
            merged: cfg.record_estimates.then(|| running.clone()),
        });
        t += 1;
    }
    let estimate = total.finish(p)?;
    Ok(ActiveTrace { records, estimate, final_design: p.clone() })
}
