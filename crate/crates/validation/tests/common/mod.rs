//! Oracles shared by several test targets.

/// Grid-search projection oracle that never looks at the dual variable.
///
/// Starting from a feasible point, repeatedly moves one lattice step of mass
/// between two coordinates while that lowers `‖p − v‖²`. For a separable
/// convex objective over `{1ᵀp = m} ∩ box`, pairwise moves reach the lattice
/// optimum; refining the step from 0.1 down to 1e-3 keeps the search short.
pub fn grid_projection(v: &[f64], budget: f64, lo: f64, hi: f64) -> Vec<f64> {
    let n = v.len();
    let mut p = vec![budget / n as f64; n];
    let cost = |x: f64, i: usize| (x - v[i]).powi(2);
    for step in [0.1f64, 0.01, 1e-3] {
        loop {
            let mut best = (0.0, 0, 0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    // Steps are truncated at the box so the bounds themselves are reachable.
                    let d = step.min(hi - p[i]).min(p[j] - lo);
                    if i == j || d <= 1e-15 {
                        continue;
                    }
                    let gain = cost(p[i], i) + cost(p[j], j) - cost(p[i] + d, i) - cost(p[j] - d, j);
                    if gain > best.0 + 1e-15 {
                        best = (gain, i, j, d);
                    }
                }
            }
            if best.0 <= 0.0 {
                break;
            }
            p[best.1] += best.3;
            p[best.2] -= best.3;
        }
    }
    p
}
