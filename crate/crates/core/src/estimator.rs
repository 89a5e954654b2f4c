//! Unbiased covariance estimation from masked samples.
//!
//! `Σ̂ = (1/T) Σ_k y⁽ᵏ⁾ y⁽ᵏ⁾ᵀ ⊙ Ξ†`. Outer products are summed first and the
//! Hadamard weight is applied once when the estimate is finalized.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sampling::{hadamard_inverse, make_xi, MaskDistribution, MaskedSample};

/// A symmetric covariance estimate and the bookkeeping that produced it.
///
/// The matrix need not be positive semidefinite. `iteration` counts how many
/// batch estimates were merged into it with [`merge_estimates`].
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    matrix: DMatrix<f64>,
    sample_count: usize,
    iteration: usize,
}

impl CovarianceEstimate {
    /// The empty estimate `Σ̂⁽⁰⁾ = 0`.
    pub fn zeros(n: usize) -> Self {
        Self { matrix: DMatrix::zeros(n, n), sample_count: 0, iteration: 0 }
    }

    /// Wraps a matrix computed from `sample_count` samples as a single batch.
    pub fn from_matrix(matrix: DMatrix<f64>, sample_count: usize) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), got: matrix.ncols() });
        }
        let n = matrix.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (matrix[(i, j)], matrix[(j, i)]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(crate::error::invalid(format!(
                        "matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        if sample_count == 0 && matrix.iter().any(|&v| v != 0.0) {
            return Err(crate::error::invalid("an estimate from zero samples must be zero"));
        }
        let iteration = usize::from(sample_count > 0);
        Ok(Self { matrix, sample_count, iteration })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }
}

/// Running sum of outer products `Σ_k y yᵀ`.
///
/// Only the upper triangle is accumulated; partial sums from different
/// workers combine with [`CovAccumulator::merge`].
#[derive(Debug, Clone)]
pub struct CovAccumulator {
    sum: DMatrix<f64>,
    count: usize,
    observed: usize,
}

impl CovAccumulator {
    pub fn new(n: usize) -> Self {
        Self { sum: DMatrix::zeros(n, n), count: 0, observed: 0 }
    }

    pub fn dim(&self) -> usize {
        self.sum.nrows()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Total number of observed coordinates over all pushed samples.
    pub fn observed_coordinates(&self) -> usize {
        self.observed
    }

    pub fn push(&mut self, sample: &MaskedSample) -> Result<()> {
        if sample.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: sample.dim() });
        }
        let y = sample.observed();
        let idx: Vec<usize> = sample.observed_indices().collect();
        for (a, &j) in idx.iter().enumerate() {
            let yj = y[j];
            for &i in &idx[..=a] {
                self.sum[(i, j)] += y[i] * yj;
            }
        }
        self.count += 1;
        self.observed += idx.len();
        Ok(())
    }

    pub fn merge(&mut self, other: &CovAccumulator) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        self.sum += &other.sum;
        self.count += other.count;
        self.observed += other.observed;
        Ok(())
    }

    /// `(1/T) Σ y yᵀ ⊙ Ξ†` for the distribution the samples were drawn under.
    pub fn finish(&self, p: &MaskDistribution) -> Result<CovarianceEstimate> {
        let n = self.dim();
        if p.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: p.dim() });
        }
        if self.count == 0 {
            return Err(Error::EmptySamples);
        }
        let weight = hadamard_inverse(make_xi(p).as_matrix())?;
        let scale = 1.0 / self.count as f64;
        let mut matrix = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = self.sum[(i, j)] * scale * weight[(i, j)];
                matrix[(i, j)] = v;
                matrix[(j, i)] = v;
            }
        }
        Ok(CovarianceEstimate { matrix, sample_count: self.count, iteration: 1 })
    }
}

/// Unbiased estimate of `Σ` from samples drawn under `p`.
pub fn estimate_cov(samples: &[MaskedSample], p: &MaskDistribution) -> Result<CovarianceEstimate> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut acc = CovAccumulator::new(p.dim());
    for s in samples {
        acc.push(s)?;
    }
    acc.finish(p)
}

/// Parallel [`estimate_cov`]: fixed-size chunks are summed on worker threads
/// and reduced left to right, so the result does not depend on scheduling.
pub fn estimate_cov_par(
    samples: &[MaskedSample],
    p: &MaskDistribution,
    chunk: usize,
) -> Result<CovarianceEstimate> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = p.dim();
    let partials = samples
        .par_chunks(chunk.max(1))
        .map(|part| {
            let mut acc = CovAccumulator::new(n);
            part.iter().try_for_each(|s| acc.push(s)).map(|_| acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = CovAccumulator::new(n);
    for part in &partials {
        total.merge(part)?;
    }
    total.finish(p)
}

/// `Σ̂⁽ᵗ⁺¹⁾ = Σ̂/(t+1) + t Σ̂⁽ᵗ⁾/(t+1)` where `t = prev.iteration()`.
///
/// Weights follow the iteration count, not the sample count.
pub fn merge_estimates(
    prev: &CovarianceEstimate,
    batch: &CovarianceEstimate,
) -> Result<CovarianceEstimate> {
    if prev.dim() != batch.dim() {
        return Err(Error::DimensionMismatch { expected: prev.dim(), got: batch.dim() });
    }
    let t = prev.iteration as f64;
    let w_new = 1.0 / (t + 1.0);
    let w_old = t / (t + 1.0);
    let matrix = if prev.iteration == 0 {
        batch.matrix.clone()
    } else {
        batch.matrix.zip_map(&prev.matrix, |b, a| w_new * b + w_old * a)
    };
    Ok(CovarianceEstimate {
        matrix,
        sample_count: prev.sample_count + batch.sample_count,
        iteration: prev.iteration + 1,
    })
}

/// `‖est − truth‖_F / ‖truth‖_F`.
pub fn relative_frobenius_error(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if est.shape() != truth.shape() {
        return Err(Error::DimensionMismatch { expected: truth.nrows(), got: est.nrows() });
    }
    let denom = truth.norm();
    if denom == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    Ok((est - truth).norm() / denom)
}
