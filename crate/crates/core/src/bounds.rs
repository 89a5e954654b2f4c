//! Error-bound diagnostics for the masked covariance estimator.
//!
//! The bound has the form
//!
//! ```text
//! ‖Σ̂ − Σ‖_q ≤ ‖H‖_q · max( √(γ L / T), γ L / T ),   L = 2 ln n + ln η
//! ```
//!
//! holding with probability at least `1 − 2/η`. `H` weighs the
//! sub-exponential norms of `x_i x_j` by the inverse sampling probabilities.
//! Those norms are not computable in general, so `H` is formed from the
//! sub-Gaussian proxy `‖x_i‖_ψ₂ = σ √Σ_ii`:
//!
//! ```text
//! h_ii = σ² Σ_ii / p_i,     h_ij = σ² √(Σ_ii Σ_jj) / (p_i p_j)
//! ```
//!
//! The off-diagonal proxy is an upper bound, so reports are conservative.
//! `γ` is a universal constant with no published value; it defaults to 1 and
//! [`calibrate_gamma`] fits it empirically on Gaussian data.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimator::CovAccumulator;
use crate::linalg;
use crate::rng;
use crate::sampling::{mask_sample, MaskDistribution};

/// Parameters of a bound evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// Sub-Gaussian ratio σ in `‖x_i‖_ψ₂ = σ √Σ_ii`.
    pub sigma: f64,
    /// Confidence parameter, `> 1`; the bound holds with probability `1 − 2/η`.
    pub eta: f64,
    pub gamma: f64,
    /// Entrywise norm order.
    pub q: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        Self { sigma: 1.0, eta: 100.0, gamma: 1.0, q: 2.0 }
    }
}

/// Everything the bound says about one `(Σ, p, T)` configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Rows of `H`.
    pub h_matrix: Vec<Vec<f64>>,
    pub h_norm_q: f64,
    pub q: f64,
    pub erank: f64,
    /// `2σ² erank(Σ) ‖Σ‖ / p̂²`, present when `q ≥ 2`.
    pub erank_bound: Option<f64>,
    pub bound_value: f64,
    pub eta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub sample_count: usize,
}

/// Proxy `H` matrix for covariance `sigma_mat`, probabilities `p` and
/// sub-Gaussian ratio `subgauss`.
pub fn h_matrix(sigma_mat: &DMatrix<f64>, p: &MaskDistribution, subgauss: f64) -> Result<DMatrix<f64>> {
    let n = p.dim();
    if sigma_mat.shape() != (n, n) {
        return Err(Error::DimensionMismatch { expected: n, got: sigma_mat.nrows() });
    }
    if !(subgauss > 0.0 && subgauss.is_finite()) {
        return Err(invalid(format!("sub-Gaussian ratio must be positive, got {subgauss}")));
    }
    let diag = sigma_mat.diagonal();
    if let Some((i, v)) = diag.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(invalid(format!("negative diagonal entry Σ[{i},{i}] = {v}")));
    }
    let s2 = subgauss * subgauss;
    let probs = p.probs();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            s2 * diag[i] / probs[i]
        } else {
            s2 * (diag[i] * diag[j]).sqrt() / (probs[i] * probs[j])
        }
    }))
}

/// `(Σ_ij |m_ij|^q)^{1/q}` for `q ≥ 1`.
pub fn entrywise_norm(m: &DMatrix<f64>, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(invalid(format!("norm order must be at least 1, got {q}")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid("matrix has non-finite entries"));
    }
    let scale = m.amax();
    if scale == 0.0 {
        return Ok(0.0);
    }
    if q.is_infinite() {
        return Ok(scale);
    }
    let sum: f64 = m.iter().map(|v| (v.abs() / scale).powf(q)).sum();
    Ok(scale * sum.powf(1.0 / q))
}

/// `tr(Σ) / ‖Σ‖` for a nonzero PSD matrix.
pub fn effective_rank(sigma_mat: &DMatrix<f64>) -> Result<f64> {
    let eig = linalg::psd_eigenvalues(sigma_mat)?;
    let top = eig.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return Err(Error::ZeroMatrix);
    }
    Ok(sigma_mat.trace() / top)
}

/// Right-hand side of the high-probability bound.
pub fn error_bound(h_norm_q: f64, n: usize, samples: usize, eta: f64, gamma: f64) -> Result<f64> {
    if samples == 0 {
        return Err(invalid("sample count must be positive"));
    }
    if n == 0 {
        return Err(invalid("dimension must be positive"));
    }
    if !(eta > 1.0) {
        return Err(invalid(format!("η must exceed 1, got {eta}")));
    }
    if !(gamma > 0.0) {
        return Err(invalid(format!("γ must be positive, got {gamma}")));
    }
    if !(h_norm_q >= 0.0) {
        return Err(invalid(format!("‖H‖_q must be nonnegative, got {h_norm_q}")));
    }
    let x = gamma * log_factor(n, eta) / samples as f64;
    Ok(h_norm_q * x.sqrt().max(x))
}

/// `2 ln n + ln η`.
pub fn log_factor(n: usize, eta: f64) -> f64 {
    2.0 * (n as f64).ln() + eta.ln()
}

/// The effective-rank bound on `‖H‖_q` together with the value it bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErankBound {
    /// `2σ² erank(Σ) ‖Σ‖ / p̂²`.
    pub value: f64,
    /// `‖H‖_q` of the proxy matrix.
    pub h_norm_q: f64,
}

/// `‖H‖_q ≤ 2σ² erank(Σ) ‖Σ‖ / p̂²`, valid for `q ≥ 2`.
///
/// Panics if the computed `‖H‖_q` exceeds the bound, which would mean a bug
/// in [`h_matrix`] or [`entrywise_norm`].
pub fn h_norm_erank_bound(
    sigma_mat: &DMatrix<f64>,
    p: &MaskDistribution,
    subgauss: f64,
    q: f64,
) -> Result<ErankBound> {
    if !(q >= 2.0) {
        return Err(invalid(format!("the effective-rank bound needs q ≥ 2, got {q}")));
    }
    let h = h_matrix(sigma_mat, p, subgauss)?;
    let h_norm_q = entrywise_norm(&h, q)?;
    let eig = linalg::psd_eigenvalues(sigma_mat)?;
    let top = eig.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let erank = sigma_mat.trace() / top;
    let p_min = p.min_prob();
    let value = 2.0 * subgauss * subgauss * erank * top / (p_min * p_min);
    assert!(
        h_norm_q <= value * (1.0 + 1e-12),
        "‖H‖_q = {h_norm_q} exceeds its effective-rank bound {value}"
    );
    Ok(ErankBound { value, h_norm_q })
}

/// Assembles a [`BoundReport`] for the true covariance `sigma_mat`.
pub fn bound_report(
    sigma_mat: &DMatrix<f64>,
    p: &MaskDistribution,
    samples: usize,
    params: &BoundParams,
) -> Result<BoundReport> {
    let h = h_matrix(sigma_mat, p, params.sigma)?;
    let h_norm_q = entrywise_norm(&h, params.q)?;
    let erank = effective_rank(sigma_mat)?;
    let erank_bound = if params.q >= 2.0 {
        Some(h_norm_erank_bound(sigma_mat, p, params.sigma, params.q)?.value)
    } else {
        None
    };
    let bound_value = error_bound(h_norm_q, p.dim(), samples, params.eta, params.gamma)?;
    Ok(BoundReport {
        h_matrix: h.row_iter().map(|r| r.iter().copied().collect()).collect(),
        h_norm_q,
        q: params.q,
        erank,
        erank_bound,
        bound_value,
        eta: params.eta,
        gamma: params.gamma,
        sigma: params.sigma,
        sample_count: samples,
    })
}

/// Outcome of a Monte-Carlo fit of `γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaCalibration {
    /// Smallest `γ` for which at most `⌊2R/η⌋` of the `R` trials exceed the bound.
    pub gamma: f64,
    pub trials: usize,
    /// Trials whose error exceeds the bound at the fitted `γ`.
    pub exceedances: usize,
    /// Per-trial `‖Σ̂ − Σ‖_q / ‖H‖_q`, in trial order.
    pub error_ratios: Vec<f64>,
}

/// Smallest `γ` with `max(√(γL/T), γL/T) ≥ ratio`.
pub fn gamma_to_cover(ratio: f64, n: usize, samples: usize, eta: f64) -> f64 {
    let x = if ratio <= 1.0 { ratio * ratio } else { ratio };
    x * samples as f64 / log_factor(n, eta)
}

/// Relative errors `‖Σ̂ − Σ‖_q / ‖H‖_q` over `trials` Gaussian experiments
/// with `T = samples` masked observations each.
pub fn error_ratios(
    sigma_mat: &DMatrix<f64>,
    p: &MaskDistribution,
    samples: usize,
    params: &BoundParams,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = p.dim();
    let h_norm = entrywise_norm(&h_matrix(sigma_mat, p, params.sigma)?, params.q)?;
    if h_norm == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let factor = linalg::psd_sqrt(sigma_mat)?;
    (0..trials)
        .into_par_iter()
        .map(|r| {
            let mut data = rng::stream(seed, &[rng::tag::TRIAL, r as u64, rng::tag::DATA]);
            let mut masks = rng::stream(seed, &[rng::tag::TRIAL, r as u64, rng::tag::MASK]);
            let mut acc = CovAccumulator::new(n);
            for _ in 0..samples {
                let g = nalgebra::DVector::from_fn(n, |_, _| StandardNormal.sample(&mut data));
                let x = &factor * g;
                acc.push(&mask_sample(&x, p, &mut masks)?)?;
            }
            let est = acc.finish(p)?;
            Ok(entrywise_norm(&(est.matrix() - sigma_mat), params.q)? / h_norm)
        })
        .collect()
}

/// Fits the smallest `γ` achieving the `1 − 2/η` coverage target on Gaussian
/// data with covariance `sigma_mat`. `params.gamma` is ignored.
pub fn calibrate_gamma(
    sigma_mat: &DMatrix<f64>,
    p: &MaskDistribution,
    samples: usize,
    params: &BoundParams,
    trials: usize,
    seed: u64,
) -> Result<GammaCalibration> {
    if trials == 0 || samples == 0 {
        return Err(invalid("calibration needs at least one trial and one sample"));
    }
    if !(params.eta > 1.0) {
        return Err(invalid(format!("η must exceed 1, got {}", params.eta)));
    }
    let ratios = error_ratios(sigma_mat, p, samples, params, trials, seed)?;
    let n = p.dim();
    let mut needed: Vec<f64> =
        ratios.iter().map(|&r| gamma_to_cover(r, n, samples, params.eta)).collect();
    needed.sort_by(|a, b| b.total_cmp(a));
    let allowed = ((2.0 * trials as f64 / params.eta).floor() as usize).min(trials - 1);
    let gamma = needed[allowed].max(f64::MIN_POSITIVE);
    let exceedances = needed.iter().filter(|&&g| g > gamma).count();
    Ok(GammaCalibration { gamma, trials, exceedances, error_ratios: ratios })
}
