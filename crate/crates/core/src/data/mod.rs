//! Sources of the unmasked vectors `x`.

pub mod empirical;
pub mod idx;
pub mod synthetic;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::Stream;

pub use empirical::{build_empirical_source, EmpiricalSampler, EmpiricalSource};
pub use idx::{encode_idx, encode_idx_gz, load_idx, parse_idx, IdxTensor};
pub use synthetic::SyntheticModel;

/// Something that yields i.i.d. vectors of a fixed dimension.
pub trait SampleOracle {
    fn dim(&self) -> usize;

    fn next_sample(&mut self) -> Result<DVector<f64>>;

    fn draw(&mut self, count: usize) -> Result<Vec<DVector<f64>>> {
        (0..count).map(|_| self.next_sample()).collect()
    }
}

/// Gaussian draws from a [`SyntheticModel`].
#[derive(Debug)]
pub struct SyntheticOracle<'a> {
    pub model: &'a SyntheticModel,
    pub rng: Stream,
}

impl SampleOracle for SyntheticOracle<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn next_sample(&mut self) -> Result<DVector<f64>> {
        Ok(self.model.draw(&mut self.rng))
    }
}

impl SampleOracle for EmpiricalSampler<'_> {
    fn dim(&self) -> usize {
        EmpiricalSampler::dim(self)
    }

    fn next_sample(&mut self) -> Result<DVector<f64>> {
        Ok(self.draw())
    }
}

/// Replays a fixed list of vectors and fails once it runs out.
#[derive(Debug, Clone)]
pub struct ReplayOracle<'a> {
    data: &'a [DVector<f64>],
    dim: usize,
    pos: usize,
}

impl<'a> ReplayOracle<'a> {
    pub fn new(data: &'a [DVector<f64>], dim: usize) -> Self {
        Self { data, dim, pos: 0 }
    }

    pub fn consumed(&self) -> usize {
        self.pos
    }
}

impl SampleOracle for ReplayOracle<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn next_sample(&mut self) -> Result<DVector<f64>> {
        let x = self
            .data
            .get(self.pos)
            .ok_or(Error::OracleExhausted { provided: self.data.len(), requested: self.pos + 1 })?;
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        self.pos += 1;
        Ok(x.clone())
    }
}

/// A covariance source for experiments.
#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic(SyntheticModel),
    Empirical(EmpiricalSource),
}

impl DataSource {
    pub fn dim(&self) -> usize {
        match self {
            DataSource::Synthetic(m) => m.dim(),
            DataSource::Empirical(s) => s.dim(),
        }
    }

    /// The true covariance `Σ` of the generated vectors.
    pub fn sigma(&self) -> DMatrix<f64> {
        match self {
            DataSource::Synthetic(m) => m.sigma().clone(),
            DataSource::Empirical(s) => s.sigma(),
        }
    }

    /// `count` draws using the stream for `seed`.
    pub fn sample_x(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        match self {
            DataSource::Synthetic(m) => m.sample_x(count, seed),
            DataSource::Empirical(s) => s.sample_x(count, seed),
        }
    }
}
