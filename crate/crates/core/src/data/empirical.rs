//! Dataset-backed source: `x = z + √(θ‖C‖) e` where `z` runs through the
//! mean-removed records without replacement and `e ~ N(0, I)`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::idx::IdxTensor;
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::rng::{self, Stream};

/// Mean-removed records with their covariance `C` and the noise level `θ`.
#[derive(Debug, Clone)]
pub struct EmpiricalSource {
    records: Vec<DVector<f64>>,
    base: DMatrix<f64>,
    base_norm: f64,
    theta: f64,
}

impl EmpiricalSource {
    /// Removes the record mean and computes `C = (1/N) Σ z zᵀ`.
    pub fn from_records(mut records: Vec<DVector<f64>>, theta: f64) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(invalid(format!("noise level θ must be finite and nonnegative, got {theta}")));
        }
        let first = records.first().ok_or(Error::EmptySamples)?;
        let n = first.len();
        if let Some(r) = records.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: r.len() });
        }
        let count = records.len() as f64;
        let mean = records.iter().fold(DVector::zeros(n), |acc, r| acc + r) / count;
        for r in records.iter_mut() {
            *r -= &mean;
        }
        let z = DMatrix::from_fn(records.len(), n, |k, i| records[k][i]);
        let base = linalg::symmetrize(&(z.transpose() * &z / count));
        let base_norm = linalg::spectral_norm(&base)?;
        Ok(Self { records, base, base_norm, theta })
    }

    pub fn dim(&self) -> usize {
        self.base.nrows()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[DVector<f64>] {
        &self.records
    }

    /// Record covariance `C`.
    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    pub fn base_norm(&self) -> f64 {
        self.base_norm
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Standard deviation of the added noise, `√(θ‖C‖)`.
    pub fn noise_scale(&self) -> f64 {
        (self.theta * self.base_norm).sqrt()
    }

    /// `Σ = C + θ‖C‖I`.
    pub fn sigma(&self) -> DMatrix<f64> {
        let n = self.dim();
        &self.base + DMatrix::identity(n, n) * (self.theta * self.base_norm)
    }

    pub fn sampler(&self, rng: Stream) -> EmpiricalSampler<'_> {
        EmpiricalSampler { source: self, rng, order: Vec::new(), pos: 0 }
    }

    pub fn sample_x(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut s = self.sampler(rng::stream(seed, &[rng::tag::DATA]));
        (0..count).map(|_| s.draw()).collect()
    }
}

/// Draws records without replacement, reshuffling at each epoch boundary.
#[derive(Debug)]
pub struct EmpiricalSampler<'a> {
    source: &'a EmpiricalSource,
    rng: Stream,
    order: Vec<usize>,
    pos: usize,
}

impl EmpiricalSampler<'_> {
    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    /// Index of the next record, starting a new epoch when needed.
    pub fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order = (0..self.source.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }

    pub fn draw(&mut self) -> DVector<f64> {
        let z = &self.source.records[self.next_index()];
        let scale = self.source.noise_scale();
        if scale == 0.0 {
            return z.clone();
        }
        let rng = &mut self.rng;
        DVector::from_fn(z.len(), |i, _| {
            let e: f64 = StandardNormal.sample(rng);
            z[i] + scale * e
        })
    }
}

/// Selects the images labelled `digit`, flattens them to vectors scaled to
/// `[0, 1]`, and builds the source.
pub fn build_empirical_source(
    images: &IdxTensor,
    labels: &IdxTensor,
    digit: u8,
    theta: f64,
) -> Result<EmpiricalSource> {
    if images.items() != labels.items() {
        return Err(Error::DimensionMismatch { expected: images.items(), got: labels.items() });
    }
    let records: Vec<DVector<f64>> = (0..labels.items())
        .filter(|&k| labels.data[k] == digit)
        .map(|k| DVector::from_iterator(images.item_len(), images.item(k).iter().map(|&b| b as f64 / 255.0)))
        .collect();
    if records.is_empty() {
        return Err(Error::NoMatchingRecords(digit));
    }
    EmpiricalSource::from_records(records, theta)
}
