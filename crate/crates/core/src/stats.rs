//! Summary statistics used when comparing experiment arms.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Result};

/// Sample mean and unbiased standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Paired one-sided t-test of `H₁: mean(a − b) < 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub mean_diff: f64,
    pub t_statistic: f64,
    pub p_value: f64,
    pub pairs: usize,
}

pub fn paired_less(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid("paired test needs two equal-length samples of size ≥ 2"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_std(&diffs);
    let n = diffs.len() as f64;
    let t = if sd == 0.0 {
        if mean < 0.0 { f64::NEG_INFINITY } else if mean > 0.0 { f64::INFINITY } else { 0.0 }
    } else {
        mean / (sd / n.sqrt())
    };
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| invalid(e.to_string()))?;
    let p_value = if t.is_nan() { 1.0 } else { dist.cdf(t) };
    Ok(PairedTest { mean_diff: mean, t_statistic: t, p_value, pairs: diffs.len() })
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid("regression needs two equal-length samples of size ≥ 2"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("regression needs at least two distinct x values"));
    }
    Ok(sxy / sxx)
}
