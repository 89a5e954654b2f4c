//! Dense symmetric helpers built on nalgebra's symmetric eigensolver.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below `-PSD_TOL * max(1, λ_max)` are treated as a violation.
pub const PSD_TOL: f64 = 1e-8;

/// Eigenvalues in `[-SQRT_CLAMP_TOL * max(1, λ_max), 0)` are clamped to zero
/// when forming a square root.
pub const SQRT_CLAMP_TOL: f64 = 1e-10;

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of the symmetric part of `m`.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(crate::error::invalid("matrix has non-finite entries"));
    }
    Ok(SymmetricEigen::new(symmetrize(m)))
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    let eig = sym_eigen(m)?;
    Ok(eig.eigenvalues.iter().fold(0.0, |acc: f64, v| acc.max(v.abs())))
}

/// Checks `m` is PSD within [`PSD_TOL`] and returns its eigenvalues.
pub fn psd_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let eig = sym_eigen(m)?;
    let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let max = values.iter().copied().fold(0.0, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL * max.max(1.0) {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok(values)
}

/// Symmetric square root `F` with `F Fᵀ = m`; small negative eigenvalues
/// are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m)?;
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let floor = -SQRT_CLAMP_TOL * max.max(1.0);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < floor {
            return Err(Error::NotPsd { min_eigenvalue: *v });
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    let scaled = q * DMatrix::from_diagonal(&roots);
    Ok(symmetrize(&(scaled * q.transpose())))
}
