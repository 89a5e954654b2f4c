//! Gaussian models `Σ = C + θ‖C‖I` with controllable effective rank.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::linalg;
use crate::rng::{self, Stream};

/// A zero-mean Gaussian model with covariance `Σ = C + θ‖C‖I`.
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    base: DMatrix<f64>,
    base_norm: f64,
    theta: f64,
    sigma: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl SyntheticModel {
    /// Builds the model from a PSD base covariance `C` and noise level `θ ≥ 0`.
    pub fn from_base(base: DMatrix<f64>, theta: f64) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(invalid(format!("noise level θ must be finite and nonnegative, got {theta}")));
        }
        let eig = linalg::psd_eigenvalues(&base)?;
        let base = linalg::symmetrize(&base);
        let base_norm = eig.iter().copied().fold(0.0, f64::max);
        let n = base.nrows();
        let sigma = &base + DMatrix::identity(n, n) * (theta * base_norm);
        let factor = linalg::psd_sqrt(&sigma)?;
        Ok(Self { base, base_norm, theta, sigma, factor })
    }

    /// Spiked base `C = Q diag(λ,…,λ,1,…,1) Qᵀ` with `k` spikes and a Haar
    /// random orthogonal `Q` drawn from `seed`.
    pub fn spiked(n: usize, spikes: usize, spike: f64, theta: f64, seed: u64) -> Result<Self> {
        if n == 0 || spikes == 0 || spikes > n {
            return Err(invalid(format!("need 1 ≤ spikes ≤ n, got spikes = {spikes}, n = {n}")));
        }
        if !(spike >= 1.0 && spike.is_finite()) {
            return Err(invalid(format!("spike height must be at least 1, got {spike}")));
        }
        let q = random_orthogonal(n, &mut rng::stream(seed, &[rng::tag::MODEL]));
        let lambda = DVector::from_fn(n, |i, _| if i < spikes { spike } else { 1.0 });
        let base = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
        Self::from_base(base, theta)
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// The base covariance `C`.
    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    /// Spectral norm `‖C‖`.
    pub fn base_norm(&self) -> f64 {
        self.base_norm
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// The model covariance `Σ`.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Symmetric square root `F` of `Σ`; samples are `x = F g`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// `(erank(C) + nθ) / (1 + θ)`.
    pub fn erank_formula(&self) -> Result<f64> {
        let erank_c = crate::bounds::effective_rank(&self.base)?;
        Ok((erank_c + self.dim() as f64 * self.theta) / (1.0 + self.theta))
    }

    /// One draw `x = F g`, `g ~ N(0, I)`.
    pub fn draw(&self, rng: &mut Stream) -> DVector<f64> {
        let g = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        &self.factor * g
    }

    pub fn sample_x(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut s = rng::stream(seed, &[rng::tag::DATA]);
        (0..count).map(|_| self.draw(&mut s)).collect()
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
pub fn random_orthogonal(n: usize, rng: &mut Stream) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}
