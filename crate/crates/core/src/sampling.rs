//! Bernoulli masking observation model.
//!
//! Each coordinate `x_i` is observed independently with probability `p_i`;
//! the observation is `y = δ ⊙ x`. The mask second-moment matrix `Ξ`
//! (`p_i` on the diagonal, `p_i p_j` elsewhere) and its entrywise inverse
//! reweight the empirical second moment of `y` into an unbiased estimate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-coordinate observation probabilities.
///
/// Every entry lies in `(0, 1]`; the budget `m` is their sum, the expected
/// number of observed coordinates per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MaskDistribution {
    p: Vec<f64>,
    budget: f64,
}

impl MaskDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(crate::error::invalid("mask distribution needs at least one coordinate"));
        }
        for (index, &value) in p.iter().enumerate() {
            if !(value > 0.0 && value <= 1.0) {
                return Err(Error::InvalidProbability { index, value });
            }
        }
        let budget = p.iter().sum();
        Ok(Self { p, budget })
    }

    /// `p_i = m / n` for every coordinate.
    pub fn uniform(n: usize, budget: f64) -> Result<Self> {
        if n == 0 {
            return Err(crate::error::invalid("dimension must be positive"));
        }
        Self::new(vec![budget / n as f64; n])
    }

    /// Full observation, `p = 1ⁿ`.
    pub fn full(n: usize) -> Result<Self> {
        Self::uniform(n, n as f64)
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// Smallest observation probability.
    pub fn min_prob(&self) -> f64 {
        self.p.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl TryFrom<Vec<f64>> for MaskDistribution {
    type Error = Error;

    fn try_from(p: Vec<f64>) -> Result<Self> {
        Self::new(p)
    }
}

impl From<MaskDistribution> for Vec<f64> {
    fn from(d: MaskDistribution) -> Self {
        d.p
    }
}

/// A realized observation: the mask and `y = δ ⊙ x`.
///
/// The mask is kept next to `y` because a zero in `y` does not tell an
/// unobserved coordinate apart from one observed as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSample {
    mask: Vec<bool>,
    observed: DVector<f64>,
}

impl MaskedSample {
    /// Builds a sample from a mask and the underlying vector `x`.
    pub fn new(mask: Vec<bool>, x: &DVector<f64>) -> Result<Self> {
        if mask.len() != x.len() {
            return Err(Error::DimensionMismatch { expected: mask.len(), got: x.len() });
        }
        let observed = DVector::from_iterator(
            x.len(),
            mask.iter().zip(x.iter()).map(|(&d, &v)| if d { v } else { 0.0 }),
        );
        Ok(Self { mask, observed })
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn observed(&self) -> &DVector<f64> {
        &self.observed
    }

    /// Number of observed coordinates.
    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&d| d).count()
    }

    /// Indices of observed coordinates, ascending.
    pub fn observed_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter_map(|(i, &d)| d.then_some(i))
    }
}

/// `Ξ` with `ξ_ii = p_i` and `ξ_ij = p_i p_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct XiMatrix(DMatrix<f64>);

impl XiMatrix {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

pub fn make_xi(p: &MaskDistribution) -> XiMatrix {
    let probs = p.probs();
    let n = probs.len();
    XiMatrix(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            probs[i]
        } else {
            probs[i] * probs[j]
        }
    }))
}

/// Entrywise reciprocal of a strictly positive matrix.
pub fn hadamard_inverse(xi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    for i in 0..xi.nrows() {
        for j in 0..xi.ncols() {
            let value = xi[(i, j)];
            if !(value > 0.0) {
                return Err(Error::NonPositiveEntry { row: i, col: j, value });
            }
        }
    }
    Ok(xi.map(|v| 1.0 / v))
}

/// Draws `δ` with independent coordinates, `P(δ_i = 1) = p_i`.
pub fn draw_mask<R: Rng + ?Sized>(p: &MaskDistribution, rng: &mut R) -> Vec<bool> {
    p.probs().iter().map(|&pi| rng.random_bool(pi)).collect()
}

/// Masks `x` with a fresh draw from `p`.
pub fn mask_sample<R: Rng + ?Sized>(
    x: &DVector<f64>,
    p: &MaskDistribution,
    rng: &mut R,
) -> Result<MaskedSample> {
    if x.len() != p.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: x.len() });
    }
    MaskedSample::new(draw_mask(p, rng), x)
}
