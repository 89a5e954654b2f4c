use std::io;

use thiserror::Error;

/// Errors produced by the estimation, design and data routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid probability p[{index}] = {value}; every entry must lie in (0, 1]")]
    InvalidProbability { index: usize, value: f64 },

    #[error("matrix entry ({row}, {col}) = {value} is not strictly positive")]
    NonPositiveEntry { row: usize, col: usize, value: f64 },

    #[error("empty sample list")]
    EmptySamples,

    #[error("reference matrix has zero norm")]
    ZeroMatrix,

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("infeasible budget m = {budget} for n = {n} coordinates in [{lo}, {hi}]")]
    InfeasibleBudget { budget: f64, n: usize, lo: f64, hi: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sample source exhausted after {provided} vectors ({requested} requested)")]
    OracleExhausted { provided: usize, requested: usize },

    #[error("malformed IDX data: {0}")]
    Idx(String),

    #[error("dataset file not found: {0}")]
    MissingDataset(String),

    #[error("no records with label {0}")]
    NoMatchingRecords(u8),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
