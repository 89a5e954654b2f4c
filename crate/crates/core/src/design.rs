//! Sampling-probability design under an observation budget.
//!
//! Solves
//!
//! ```text
//! min_{p, ρ} ½ ‖p − ρ s‖²   s.t.  1ᵀp = m,  ε ≤ p ≤ 1,    s = diag(Σ)^{1/2}
//! ```
//!
//! by alternating exact minimization: `ρ = ⟨p, s⟩ / ‖s‖²` for fixed `p`,
//! then `p = Π(ρ s)` for fixed `ρ`, where `Π` is the Euclidean projection onto
//! the budget-constrained box. The floor `ε > 0` keeps every coordinate
//! observable.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bounds;
use crate::error::{invalid, Error, Result};
use crate::estimator::CovarianceEstimate;
use crate::sampling::MaskDistribution;

/// Default probability floor.
pub const DEFAULT_FLOOR: f64 = 1e-3;

const BUDGET_TOL: f64 = 1e-10;
const MAX_BISECTIONS: usize = 200;
const MAX_ITERATIONS: usize = 500;
const OBJECTIVE_TOL: f64 = 1e-12;

/// Result of [`project_box_simplex`]: `values_i = clamp(v_i − shift, lo, hi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub values: Vec<f64>,
    /// The dual scalar λ.
    pub shift: f64,
}

fn clamp_shift(v: &[f64], shift: f64, lo: f64, hi: f64) -> impl Iterator<Item = f64> + '_ {
    v.iter().map(move |&x| (x - shift).clamp(lo, hi))
}

fn check_budget(n: usize, budget: f64, lo: f64, hi: f64) -> Result<()> {
    let slack = 1e-12 * (n as f64).max(1.0);
    let ok = n > 0
        && lo <= hi
        && budget.is_finite()
        && budget >= n as f64 * lo - slack
        && budget <= n as f64 * hi + slack;
    if ok {
        Ok(())
    } else {
        Err(Error::InfeasibleBudget { budget, n, lo, hi })
    }
}

/// Euclidean projection of `v` onto `{p : 1ᵀp = budget, lo ≤ p_i ≤ hi}`.
///
/// Bisects on λ in `[min v − hi, max v − lo]`, where `Σ clamp(v_i − λ)` is
/// nonincreasing, then solves for λ exactly on the active set found.
pub fn project_box_simplex(v: &[f64], budget: f64, lo: f64, hi: f64) -> Result<Projection> {
    let n = v.len();
    check_budget(n, budget, lo, hi)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid("projection input has non-finite entries"));
    }
    let total = |shift: f64| clamp_shift(v, shift, lo, hi).sum::<f64>();

    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Budgets at the ends of the feasible range pin every coordinate.
    if budget >= n as f64 * hi - BUDGET_TOL {
        return Ok(Projection { values: vec![hi; n], shift: vmin - hi });
    }
    if budget <= n as f64 * lo + BUDGET_TOL {
        return Ok(Projection { values: vec![lo; n], shift: vmax - lo });
    }
    let (mut a, mut b) = (vmin - hi, vmax - lo);
    let mut shift = 0.5 * (a + b);
    for _ in 0..MAX_BISECTIONS {
        shift = 0.5 * (a + b);
        let s = total(shift);
        if (s - budget).abs() <= BUDGET_TOL {
            break;
        }
        if s > budget {
            a = shift;
        } else {
            b = shift;
        }
    }

    // Exact λ for the active set at the bisection point.
    let (mut free_sum, mut free, mut fixed) = (0.0, 0usize, 0.0);
    for &x in v {
        let y = x - shift;
        if y >= hi {
            fixed += hi;
        } else if y <= lo {
            fixed += lo;
        } else {
            free_sum += x;
            free += 1;
        }
    }
    if free > 0 {
        let exact = (free_sum - (budget - fixed)) / free as f64;
        let consistent = v.iter().all(|&x| {
            let (y, y2) = (x - shift, x - exact);
            (y >= hi) == (y2 >= hi) && (y <= lo) == (y2 <= lo)
        });
        if consistent && (total(exact) - budget).abs() <= (total(shift) - budget).abs() {
            shift = exact;
        }
    }
    Ok(Projection { values: clamp_shift(v, shift, lo, hi).collect(), shift })
}

/// Largest violation of the projection optimality conditions: there must be
/// a λ with `p_i = clamp(v_i − λ, lo, hi)` for every `i` and `Σ p_i = budget`.
///
/// λ is recovered from `p` alone, so this check does not trust the solver.
pub fn kkt_residual(v: &[f64], p: &[f64], budget: f64, lo: f64, hi: f64) -> f64 {
    let tol = 1e-12;
    let free: Vec<f64> = v
        .iter()
        .zip(p)
        .filter(|(_, &pi)| pi > lo + tol && pi < hi - tol)
        .map(|(&vi, &pi)| vi - pi)
        .collect();
    let shift = if free.is_empty() {
        // Any λ with v_i − λ ≥ hi on capped and v_i − λ ≤ lo on floored coordinates.
        let upper = v
            .iter()
            .zip(p)
            .filter(|(_, &pi)| pi >= hi - tol)
            .map(|(&vi, _)| vi - hi)
            .fold(f64::INFINITY, f64::min);
        let lower = v
            .iter()
            .zip(p)
            .filter(|(_, &pi)| pi <= lo + tol)
            .map(|(&vi, _)| vi - lo)
            .fold(f64::NEG_INFINITY, f64::max);
        match (lower.is_finite(), upper.is_finite()) {
            (true, true) => 0.5 * (lower + upper),
            (true, false) => lower,
            (false, true) => upper,
            (false, false) => 0.0,
        }
    } else {
        free.iter().sum::<f64>() / free.len() as f64
    };
    let coord = v
        .iter()
        .zip(p)
        .map(|(&vi, &pi)| (pi - (vi - shift).clamp(lo, hi)).abs())
        .fold(0.0, f64::max);
    coord.max((p.iter().sum::<f64>() - budget).abs())
}

/// A design instance: target shape `s`, budget `m`, floor `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignProblem {
    shape: Vec<f64>,
    budget: f64,
    floor: f64,
}

impl DesignProblem {
    pub fn new(shape: Vec<f64>, budget: f64, floor: f64) -> Result<Self> {
        let n = shape.len();
        if !(floor >= 0.0 && floor <= 1.0) {
            return Err(invalid(format!("probability floor must lie in [0, 1], got {floor}")));
        }
        check_budget(n, budget, floor, 1.0)?;
        if !(budget > 0.0) {
            return Err(Error::InfeasibleBudget { budget, n, lo: floor, hi: 1.0 });
        }
        if let Some(x) = shape.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(invalid(format!("target shape entries must be finite and nonnegative, got {x}")));
        }
        if shape.iter().all(|&x| x == 0.0) {
            return Err(invalid("target shape is identically zero"));
        }
        Ok(Self { shape, budget, floor })
    }

    /// `s = diag(Σ)^{1/2}` from a nonnegative diagonal.
    pub fn from_diagonal(diag: &[f64], budget: f64, floor: f64) -> Result<Self> {
        if let Some(d) = diag.iter().find(|d| !(**d >= 0.0)) {
            return Err(invalid(format!("diagonal entries must be nonnegative, got {d}")));
        }
        Self::new(diag.iter().map(|d| d.sqrt()).collect(), budget, floor)
    }

    pub fn shape(&self) -> &[f64] {
        &self.shape
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// `½ ‖p − ρ s‖²`.
    pub fn objective(&self, p: &[f64], rho: f64) -> f64 {
        0.5 * p.iter().zip(&self.shape).map(|(pi, si)| (pi - rho * si).powi(2)).sum::<f64>()
    }

    pub fn solve(&self) -> Result<DesignSolution> {
        let s = &self.shape;
        let s_l1: f64 = s.iter().sum();
        let s_sq: f64 = s.iter().map(|x| x * x).sum();
        let project = |rho: f64| {
            let target: Vec<f64> = s.iter().map(|x| rho * x).collect();
            project_box_simplex(&target, self.budget, self.floor, 1.0).map(|proj| proj.values)
        };

        if s.iter().all(|&x| x == s[0]) {
            let n = s.len() as f64;
            let p = MaskDistribution::uniform(s.len(), self.budget)?;
            let rho = self.budget / (n * s[0]);
            let objective = self.objective(p.probs(), rho);
            return Ok(DesignSolution {
                p,
                rho,
                objective,
                iterations: 0,
                converged: true,
                history: vec![objective],
            });
        }

        let mut rho = self.budget / s_l1;
        let mut p = project(rho)?;
        let mut objective = self.objective(&p, rho);
        let mut history = vec![objective];
        let mut iterations = 0;
        let mut converged = false;
        while iterations < MAX_ITERATIONS {
            iterations += 1;
            let next_rho = p.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() / s_sq;
            let next = project(next_rho)?;
            let next_obj = self.objective(&next, next_rho);
            debug_assert!(
                next_obj <= objective + 1e-12 * objective.max(1.0),
                "alternating step increased the objective: {objective} -> {next_obj}"
            );
            // Exact steps cannot ascend; a rise is rounding at the optimum.
            if next_obj > objective {
                converged = true;
                break;
            }
            let decrease = objective - next_obj;
            (p, rho, objective) = (next, next_rho, next_obj);
            history.push(objective);
            if decrease < OBJECTIVE_TOL {
                converged = true;
                break;
            }
        }

        let budget_err = (p.iter().sum::<f64>() - self.budget).abs();
        if budget_err > 1e-8 {
            return Err(invalid(format!("design violates the budget by {budget_err}")));
        }
        let dist = MaskDistribution::new(p).map_err(|e| match e {
            Error::InvalidProbability { index, value } => invalid(format!(
                "design assigns p[{index}] = {value}; use a positive floor to keep every coordinate observable"
            )),
            other => other,
        })?;
        Ok(DesignSolution { p: dist, rho, objective, iterations, converged, history })
    }
}

/// Output of the design solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSolution {
    pub p: MaskDistribution,
    pub rho: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after initialization and after every alternating step.
    pub history: Vec<f64>,
}

impl DesignSolution {
    /// Projection optimality residual of `p` for the final `ρ`.
    pub fn kkt_residual(&self, problem: &DesignProblem) -> f64 {
        let target: Vec<f64> = problem.shape.iter().map(|x| self.rho * x).collect();
        kkt_residual(&target, self.p.probs(), problem.budget, problem.floor, 1.0)
    }
}

/// Designs `p` for the covariance diagonal `diag_sigma`.
pub fn design_probabilities(diag_sigma: &[f64], budget: f64, floor: f64) -> Result<DesignSolution> {
    DesignProblem::from_diagonal(diag_sigma, budget, floor)?.solve()
}

/// Redesigns `p` from a running estimate. Negative diagonal entries, which an
/// indefinite estimate may have, are treated as zero.
pub fn update_design(est: &CovarianceEstimate, budget: f64, floor: f64) -> Result<DesignSolution> {
    let diag: Vec<f64> = est.matrix().diagonal().iter().map(|d| d.max(0.0)).collect();
    design_probabilities(&diag, budget, floor)
}

/// `‖H‖_q` of each candidate design for covariance `sigma_mat`, for comparing
/// designs against the quantity the bound depends on.
pub fn compare_h_norms(
    sigma_mat: &DMatrix<f64>,
    candidates: &[MaskDistribution],
    subgauss: f64,
    q: f64,
) -> Result<Vec<f64>> {
    candidates
        .iter()
        .map(|p| bounds::entrywise_norm(&bounds::h_matrix(sigma_mat, p, subgauss)?, q))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn projection_examples() {
        let p = project_box_simplex(&[10.0, 10.0, 0.0, 0.0], 2.0, 0.0, 1.0).unwrap();
        assert!(close(&p.values, &[1.0, 1.0, 0.0, 0.0], 1e-12));

        for c in [-3.0, 0.0, 0.5, 7.0] {
            let p = project_box_simplex(&[c; 4], 2.0, 0.0, 1.0).unwrap();
            assert!(close(&p.values, &[0.5; 4], 1e-12), "{c}: {:?}", p.values);
        }

        let p = project_box_simplex(&[0.9, 0.5, 0.1], 1.5, 0.0, 1.0).unwrap();
        assert!(close(&p.values, &[0.9, 0.5, 0.1], 1e-12));
        assert!(p.shift.abs() < 1e-12);
    }

    #[test]
    fn projection_extreme_budgets() {
        let p = project_box_simplex(&[0.3, -2.0, 5.0], 3.0, 0.0, 1.0).unwrap();
        assert!(close(&p.values, &[1.0; 3], 1e-12));
        let p = project_box_simplex(&[0.3, -2.0, 5.0], 0.03, 0.01, 1.0).unwrap();
        assert!(close(&p.values, &[0.01; 3], 1e-12));
    }

    #[test]
    fn projection_rejects_infeasible() {
        assert!(matches!(
            project_box_simplex(&[1.0, 1.0], 3.0, 0.0, 1.0),
            Err(Error::InfeasibleBudget { .. })
        ));
        assert!(project_box_simplex(&[1.0, 1.0], 0.1, 0.1, 1.0).is_err());
        assert!(project_box_simplex(&[], 0.0, 0.0, 1.0).is_err());
        assert!(project_box_simplex(&[f64::NAN], 0.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn kkt_residual_detects_wrong_answer() {
        let v = [0.8, 0.4, 0.0];
        let good = project_box_simplex(&v, 1.0, 0.0, 1.0).unwrap();
        assert!(kkt_residual(&v, &good.values, 1.0, 0.0, 1.0) < 1e-12);
        assert!(kkt_residual(&v, &[0.5, 0.5, 0.0], 1.0, 0.0, 1.0) > 0.05);
    }

    #[test]
    fn uniform_diagonal_gives_uniform_design() {
        for &(n, m) in &[(4usize, 2.0), (7, 1.0), (10, 9.5), (3, 3.0)] {
            let sol = design_probabilities(&vec![2.5; n], m, DEFAULT_FLOOR).unwrap();
            assert!(sol.p.probs().iter().all(|&p| p == m / n as f64), "{:?}", sol.p);
        }
    }

    #[test]
    fn two_coordinate_example() {
        let sol = design_probabilities(&[4.0, 1.0], 1.0, 0.0).unwrap();
        assert!(close(sol.p.probs(), &[2.0 / 3.0, 1.0 / 3.0], 1e-12));
        assert!((sol.rho - 1.0 / 3.0).abs() < 1e-12);
        assert!(sol.objective < 1e-24);
        assert!(sol.converged);
    }

    #[test]
    fn dominant_coordinate_saturates() {
        let sol = design_probabilities(&[100.0, 1.0, 1.0], 2.5, 0.0).unwrap();
        assert!(close(sol.p.probs(), &[1.0, 0.75, 0.75], 1e-10), "{:?}", sol.p);
        assert!(sol.history.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn update_design_clamps_negative_diagonal() {
        let est = CovarianceEstimate::from_matrix(
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0, 0.0, -0.3])),
            5,
        )
        .unwrap();
        // s = (2, 1, 0, 0): ρ = 0.4 matches the first two exactly, the rest sit on the floor.
        let sol = update_design(&est, 1.22, 0.01).unwrap();
        assert!(close(&sol.p.probs()[..2], &[0.8, 0.4], 1e-6), "{:?}", sol.p);
        assert_eq!(sol.p.probs()[2], 0.01);
        assert_eq!(sol.p.probs()[3], 0.01);
        assert!((sol.p.budget() - 1.22).abs() < 1e-10);

        let id = CovarianceEstimate::from_matrix(DMatrix::identity(4, 4), 3).unwrap();
        let sol = update_design(&id, 2.0, DEFAULT_FLOOR).unwrap();
        assert!(close(sol.p.probs(), &[0.5; 4], 0.0));

        let two = CovarianceEstimate::from_matrix(
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0])),
            3,
        )
        .unwrap();
        assert_eq!(
            update_design(&two, 1.0, 0.0).unwrap(),
            design_probabilities(&[4.0, 1.0], 1.0, 0.0).unwrap()
        );
    }

    #[test]
    fn zero_probability_without_floor_is_rejected() {
        assert!(design_probabilities(&[4.0, 0.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn design_rejects_bad_problems() {
        assert!(design_probabilities(&[1.0, 1.0], 3.0, 0.0).is_err());
        assert!(design_probabilities(&[0.0, 0.0], 1.0, 0.0).is_err());
        assert!(design_probabilities(&[1.0, -1.0], 1.0, 0.0).is_err());
        assert!(design_probabilities(&[1.0, 1.0], 0.001, 0.01).is_err());
        assert!(design_probabilities(&[1.0, 1.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn h_norm_hook() {
        let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0]));
        let cands = [
            MaskDistribution::uniform(2, 1.0).unwrap(),
            design_probabilities(&[4.0, 1.0], 1.0, 0.0).unwrap().p,
        ];
        let norms = compare_h_norms(&sigma, &cands, 1.0, 2.0).unwrap();
        assert!((norms[0] - 14.0).abs() < 1e-12);
        assert!((norms[1] - 207f64.sqrt()).abs() < 1e-12);
    }
}
