//! Acceptance gate. Each check covers one numbered criterion and prints a
//! single `criterion N: PASS|FAIL|SKIP` line. Runs without the libtest
//! harness so the lines are never captured; exits nonzero on any failure.
//!
//! Criteria 8 to 10 share two experiment runs, computed once per process.
//! Criterion 11 needs the MNIST training files; point `COVEST_MNIST_DIR` at
//! a directory holding `train-images-idx3-ubyte` and `train-labels-idx1-ubyte`
//! (optionally `.gz`) to enable it.

use std::panic;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use covest::active::{run_active, ActiveConfig};
use covest::bounds::{effective_rank, h_norm_erank_bound};
use covest::data::{
    build_empirical_source, encode_idx, encode_idx_gz, load_idx, parse_idx, IdxTensor, ReplayOracle,
    SyntheticModel,
};
use covest::design::{design_probabilities, kkt_residual, project_box_simplex, DesignProblem};
use covest::experiment::{run_experiment, write_csv, Arm, ExperimentResult, ExperimentSpec, SourceSpec, Theta};
use covest::linalg;
use covest::rng;
use covest::sampling::{mask_sample, MaskDistribution};
use covest::stats::{mean_std, ols_slope, paired_less};
use covest::{estimate_cov, Error};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

mod common;

fn report(id: &str, pass: bool, detail: impl AsRef<str>) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id}: {verdict} | {}", detail.as_ref());
    assert!(pass, "criterion {id} failed: {}", detail.as_ref());
}

fn skip(id: &str, why: &str) {
    println!("criterion {id}: SKIP | {why}");
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Largest `|mean − truth| / se` over all entries.
fn worst_z(samples: &[DMatrix<f64>], truth: &DMatrix<f64>) -> f64 {
    let n = truth.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let (m, s) = mean_std(&samples.iter().map(|e| e[(i, j)]).collect::<Vec<_>>());
            let se = s / (samples.len() as f64).sqrt();
            worst = worst.max((m - truth[(i, j)]).abs() / se);
        }
    }
    worst
}

fn criterion_01_unbiasedness() {
    let start = Instant::now();
    let n = 6;
    let model = SyntheticModel::spiked(n, 2, 10.0, 1.0 / 6.0, 1).unwrap();
    let p = MaskDistribution::uniform(n, 3.0).unwrap();
    let trials = 2000;

    let fixed: Vec<DMatrix<f64>> = (0..trials)
        .into_par_iter()
        .map(|r| {
            let xs = model.sample_x(50, rng::derive_seed(1, &[r]));
            let mut masks = rng::stream(2, &[r]);
            let samples: Vec<_> = xs.iter().map(|x| mask_sample(x, &p, &mut masks).unwrap()).collect();
            estimate_cov(&samples, &p).unwrap().into_matrix()
        })
        .collect();
    let z_fixed = worst_z(&fixed, model.sigma());

    let active: Vec<DMatrix<f64>> = (0..trials)
        .into_par_iter()
        .map(|r| {
            let xs = model.sample_x(50, rng::derive_seed(3, &[r]));
            let cfg = ActiveConfig::new(3.0, 10, 5, rng::derive_seed(4, &[r]));
            run_active(&mut ReplayOracle::new(&xs, n), &cfg, None).unwrap().estimate.into_matrix()
        })
        .collect();
    let z_active = worst_z(&active, model.sigma());
    let elapsed = start.elapsed();

    report(
        "1",
        z_fixed <= 5.0 && z_active <= 5.0 && elapsed < Duration::from_secs(60),
        format!("worst |z| uniform {z_fixed:.2}, active {z_active:.2} (limit 5); {:.1}s", secs(elapsed)),
    );
}

fn criterion_02_full_observation_reduction() {
    let mut rng = rng::stream(22, &[]);
    let mut worst: f64 = 0.0;
    for case in 0..200u64 {
        let n = rng.random_range(1..=50);
        let count = rng.random_range(1..=60);
        let xs: Vec<DVector<f64>> =
            (0..count).map(|_| DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0))).collect();
        let p = MaskDistribution::full(n).unwrap();
        let mut masks = rng::stream(case, &[]);
        let samples: Vec<_> = xs.iter().map(|x| mask_sample(x, &p, &mut masks).unwrap()).collect();
        let est = estimate_cov(&samples, &p).unwrap();
        let plain = xs.iter().fold(DMatrix::zeros(n, n), |acc, x| acc + x * x.transpose()) / count as f64;
        worst = worst.max((est.matrix() - plain).abs().max());
    }
    report("2", worst <= 1e-12, format!("max entrywise gap {worst:.2e} over 200 cases (n ≤ 50)"));
}

fn projection_instance(rng: &mut impl Rng, n: usize) -> (Vec<f64>, f64, f64) {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..2.0)).collect();
    let lo = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.2) };
    let budget = rng.random_range(n as f64 * lo..=n as f64);
    (v, budget, lo)
}

fn criterion_03_projection() {
    let start = Instant::now();
    let mut rng = rng::stream(33, &[]);
    let mut grid_gap: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..=5);
        let (v, budget, lo) = projection_instance(&mut rng, n);
        let fast = project_box_simplex(&v, budget, lo, 1.0).unwrap().values;
        let slow = common::grid_projection(&v, budget, lo, 1.0);
        for (a, b) in fast.iter().zip(&slow) {
            grid_gap = grid_gap.max((a - b).abs());
        }
    }
    let mut kkt: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=100);
        let (v, budget, lo) = projection_instance(&mut rng, n);
        let p = project_box_simplex(&v, budget, lo, 1.0).unwrap().values;
        kkt = kkt.max(kkt_residual(&v, &p, budget, lo, 1.0));
    }
    let elapsed = start.elapsed();
    report(
        "3",
        grid_gap <= 2e-3 && kkt <= 1e-8 && elapsed < Duration::from_secs(30),
        format!("grid gap {grid_gap:.2e} (≤ 2e-3), KKT residual {kkt:.2e} (≤ 1e-8); {:.1}s", secs(elapsed)),
    );
}

fn criterion_04_design_problem() {
    let sol = design_probabilities(&[4.0, 1.0], 1.0, 0.0).unwrap();
    let gap = (sol.p.probs()[0] - 2.0 / 3.0).abs().max((sol.p.probs()[1] - 1.0 / 3.0).abs());

    let uniform_exact = [(4usize, 2.0), (10, 3.0), (16, 12.0), (7, 7.0)]
        .iter()
        .all(|&(n, m)| design_probabilities(&vec![3.0; n], m, 1e-3).unwrap().p.probs().iter().all(|&p| p == m / n as f64));

    let mut rng = rng::stream(44, &[]);
    let mut runs = 0;
    let mut monotone = true;
    for _ in 0..500 {
        let n = rng.random_range(1..=40);
        let diag: Vec<f64> = (0..n).map(|_| rng.random_range(0.001..50.0)).collect();
        let budget = rng.random_range(0.05..=1.0) * n as f64;
        let sol = DesignProblem::from_diagonal(&diag, budget, 1e-3).unwrap().solve().unwrap();
        monotone &= sol.history.windows(2).all(|w| w[1] <= w[0]);
        runs += 1;
    }
    report(
        "4",
        gap <= 1e-6 && uniform_exact && monotone,
        format!("[4,1] gap {gap:.2e}; uniform exact: {uniform_exact}; monotone on {runs} runs: {monotone}"),
    );
}

fn criterion_05_h_norm_inequality() {
    let start = Instant::now();
    let mut rng = rng::stream(55, &[]);
    let mut violations = 0;
    for case in 0..1000 {
        let n = rng.random_range(1..=10);
        let g = DMatrix::from_fn(n, rng.random_range(1..=n), |_, _| rng.random_range(-1.0..1.0));
        let sigma = &g * g.transpose() + DMatrix::identity(n, n) * 1e-9;
        let p = MaskDistribution::new((0..n).map(|_| rng.random_range(0.05..=1.0)).collect()).unwrap();
        let s = rng.random_range(0.3..3.0);
        let q = [2.0, 3.0, 4.0][case % 3];
        // The library asserts internally; recompute here so a silent bug still counts.
        match h_norm_erank_bound(&sigma, &p, s, q) {
            Ok(b) => {
                let top = linalg::spectral_norm(&sigma).unwrap();
                let rhs = 2.0 * s * s * (sigma.trace() / top) * top / p.min_prob().powi(2);
                if b.h_norm_q > rhs * (1.0 + 1e-12) {
                    violations += 1;
                }
            }
            Err(_) => violations += 1,
        }
    }
    let elapsed = start.elapsed();
    report(
        "5",
        violations == 0 && elapsed < Duration::from_secs(10),
        format!("{violations} violations in 1000 instances; {:.2}s", secs(elapsed)),
    );
}

fn criterion_06_effective_rank_identity() {
    let mut rng = rng::stream(66, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=20);
        let g = DMatrix::from_fn(n, rng.random_range(1..=n), |_, _| rng.random_range(-1.0..1.0));
        let c = &g * g.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let erank_c = effective_rank(&c).unwrap();
        let norm_c = linalg::spectral_norm(&c).unwrap();
        for theta in [1.0 / n as f64, 10.0 / n as f64, 1.0] {
            let sigma = &c + DMatrix::identity(n, n) * (theta * norm_c);
            let solved = effective_rank(&sigma).unwrap();
            let formula = (erank_c + n as f64 * theta) / (1.0 + theta);
            worst = worst.max((solved - formula).abs());
        }
    }
    report("6", worst <= 1e-10, format!("max |eigensolve − formula| {worst:.2e} over 300 cases"));
}

fn criterion_07_error_decay() {
    let n = 10;
    let model = SyntheticModel::spiked(n, 2, 10.0, 0.1, 7).unwrap();
    let p = MaskDistribution::uniform(n, 5.0).unwrap();
    let grid: Vec<usize> = (1..=100).map(|k| 100 * k).collect();
    let errors: Vec<Vec<f64>> = (0..20u64)
        .into_par_iter()
        .map(|r| {
            let xs = model.sample_x(10_000, rng::derive_seed(70, &[r]));
            let mut masks = rng::stream(71, &[r]);
            let samples: Vec<_> = xs.iter().map(|x| mask_sample(x, &p, &mut masks).unwrap()).collect();
            grid.iter()
                .map(|&t| {
                    let est = estimate_cov(&samples[..t], &p).unwrap();
                    covest::relative_frobenius_error(est.matrix(), model.sigma()).unwrap()
                })
                .collect()
        })
        .collect();
    let x: Vec<f64> = grid.iter().map(|&t| (t as f64).ln()).collect();
    let y: Vec<f64> = (0..grid.len())
        .map(|k| mean_std(&errors.iter().map(|e| e[k]).collect::<Vec<_>>()).0.ln())
        .collect();
    let slope = ols_slope(&x, &y).unwrap();
    report("7", (-0.65..=-0.35).contains(&slope), format!("log-log slope {slope:.3} (T = 100..10⁴, 20 trials)"));
}

// Shared spiked-model comparison: n = 16, k = 2, λ = 50, R = 50, B = 50, N = 40.
const BUDGETS: [f64; 3] = [0.25, 0.5, 0.75];
// The active comparison covers the two smaller budgets only.
const ACTIVE_BUDGETS: [f64; 2] = [0.25, 0.5];

fn comparison_spec(theta_num: u32) -> ExperimentSpec {
    ExperimentSpec {
        source: SourceSpec::Synthetic {
            n: 16,
            spikes: 2,
            spike: 50.0,
            theta: Theta::PerDim(format!("{theta_num}/n")),
            model_seed: 8,
        },
        arms: vec![Arm::Uniform, Arm::Designed, Arm::Active, Arm::Full],
        budgets: BUDGETS.to_vec(),
        batch_size: 50,
        iterations: 40,
        trials: 50,
        seed: 8,
        q: 2.0,
        floor: 1e-3,
        bound: None,
        output: None,
    }
}

fn comparison(theta_num: u32) -> &'static (ExperimentResult, Duration) {
    static LOW: OnceLock<(ExperimentResult, Duration)> = OnceLock::new();
    static HIGH: OnceLock<(ExperimentResult, Duration)> = OnceLock::new();
    let cell = if theta_num == 1 { &LOW } else { &HIGH };
    cell.get_or_init(|| {
        let start = Instant::now();
        let r = run_experiment(&comparison_spec(theta_num)).unwrap();
        (r, start.elapsed())
    })
}

fn criterion_08_designed_beats_uniform() {
    let (r, elapsed) = comparison(1);
    let mut ok = *elapsed < Duration::from_secs(300);
    let mut parts = Vec::new();
    for b in BUDGETS {
        let u = r.curve(Arm::Uniform, b).unwrap();
        let d = r.curve(Arm::Designed, b).unwrap();
        let worse = d.mean.iter().zip(&u.mean).filter(|(d, u)| d > u).count();
        ok &= worse == 0;
        parts.push(format!(
            "m={b}n: designed above uniform at {worse}/{} checkpoints, final {:.4} vs {:.4}",
            d.mean.len(),
            d.final_mean(),
            u.final_mean()
        ));
    }
    report("8", ok, format!("{}; {:.1}s", parts.join("; "), secs(*elapsed)));
}

fn criterion_08_designed_tracks_full_data() {
    let (r, _) = comparison(1);
    let d = r.curve(Arm::Designed, 0.75).unwrap().final_mean();
    let f = r.curve(Arm::Full, 1.0).unwrap().final_mean();
    let excess = d / f - 1.0;
    report(
        "8 (full-data clause)",
        excess <= 0.15,
        format!("m=0.75n designed final {d:.4} vs full data {f:.4}: {:+.1}% (limit +15%)", 100.0 * excess),
    );
}

fn criterion_09_active_matches_designed() {
    let (r, _) = comparison(1);
    let mut ok = true;
    let mut parts = Vec::new();
    for b in ACTIVE_BUDGETS {
        let a = r.curve(Arm::Active, b).unwrap();
        let d = r.curve(Arm::Designed, b).unwrap();
        let u = r.curve(Arm::Uniform, b).unwrap();
        let rel = (a.final_mean() - d.final_mean()).abs() / d.final_mean();
        let test = paired_less(&a.final_errors(), &u.final_errors()).unwrap();
        ok &= rel <= 0.10 && a.final_mean() < u.final_mean() && test.p_value < 0.01;
        parts.push(format!(
            "m={b}n: active {:.4}, designed {:.4} ({:.1}%), uniform {:.4}, paired p {:.1e}",
            a.final_mean(),
            d.final_mean(),
            100.0 * rel,
            u.final_mean(),
            test.p_value
        ));
    }
    report("9", ok, parts.join("; "));
}

fn criterion_10_noise_narrows_the_gap() {
    let (low, _) = comparison(1);
    let (high, _) = comparison(10);
    let ratio = |r: &ExperimentResult, b: f64| {
        r.curve(Arm::Uniform, b).unwrap().final_mean() / r.curve(Arm::Designed, b).unwrap().final_mean()
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for b in BUDGETS {
        let (lo, hi) = (ratio(low, b), ratio(high, b));
        ok &= (hi - 1.0).abs() < (lo - 1.0).abs();
        parts.push(format!("m={b}n: uniform/designed {lo:.3} at θ=1/n, {hi:.3} at θ=10/n"));
    }
    report("10", ok, parts.join("; "));
}

fn find_file(dir: &Path, stem: &str) -> Option<PathBuf> {
    [stem.to_string(), format!("{stem}.gz")].iter().map(|f| dir.join(f)).find(|p| p.is_file())
}

fn criterion_11_mnist_statistics() {
    let Some(dir) = std::env::var_os("COVEST_MNIST_DIR").map(PathBuf::from) else {
        skip("11", "COVEST_MNIST_DIR not set");
        return;
    };
    let (Some(images), Some(labels)) =
        (find_file(&dir, "train-images-idx3-ubyte"), find_file(&dir, "train-labels-idx1-ubyte"))
    else {
        skip("11", &format!("training files not found in {}", dir.display()));
        return;
    };
    let images = load_idx(images).unwrap();
    let labels = load_idx(labels).unwrap();
    let low = build_empirical_source(&images, &labels, 8, 1.0 / 784.0).unwrap();
    let high = build_empirical_source(&images, &labels, 8, 10.0 / 784.0).unwrap();
    let e_low = effective_rank(&low.sigma()).unwrap();
    let e_high = effective_rank(&high.sigma()).unwrap();
    report(
        "11",
        low.len() == 5851 && (e_low - 9.08).abs() <= 0.1 && (e_high - 17.86).abs() <= 0.2,
        format!("N = {}, erank {e_low:.3} at θ=1/n, {e_high:.3} at θ=10/n", low.len()),
    );
}

fn criterion_12_idx_parser() {
    let mut checks = Vec::new();

    let mut cube = vec![0x00, 0x00, 0x08, 0x03];
    for _ in 0..3 {
        cube.extend_from_slice(&2u32.to_be_bytes());
    }
    cube.extend(1..=8u8);
    let t = parse_idx(&cube).unwrap();
    checks.push(("shape [2,2,2]", t.shape == vec![2, 2, 2] && t.data == (1..=8).collect::<Vec<u8>>()));

    let mut labels = vec![0x00, 0x00, 0x08, 0x01];
    labels.extend_from_slice(&5u32.to_be_bytes());
    labels.extend([3, 1, 4, 1, 5]);
    let t = parse_idx(&labels).unwrap();
    checks.push(("label vector", t.shape == vec![5] && t.data == vec![3, 1, 4, 1, 5]));

    let truncated = &cube[..cube.len() - 1];
    checks.push(("truncated payload", matches!(parse_idx(truncated), Err(Error::Idx(_)))));

    let mut bad_magic = cube.clone();
    bad_magic[0] = 0x01;
    checks.push(("bad magic", matches!(parse_idx(&bad_magic), Err(Error::Idx(_)))));

    let mut bad_type = cube.clone();
    bad_type[2] = 0x0D;
    checks.push(("unsupported type", matches!(parse_idx(&bad_type), Err(Error::Idx(_)))));

    let tensor = IdxTensor::new(vec![3, 4, 5], (0..60).collect()).unwrap();
    let gz = encode_idx_gz(&tensor).unwrap();
    checks.push(("gzip detected", gz.starts_with(&[0x1F, 0x8B])));
    checks.push(("gzip round trip", parse_idx(&gz).unwrap() == tensor));
    checks.push(("raw round trip", parse_idx(&encode_idx(&tensor).unwrap()).unwrap() == tensor));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.idx.gz");
    std::fs::write(&path, &gz).unwrap();
    checks.push(("gzip file", load_idx(&path).unwrap() == tensor));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    report("12", failed.is_empty(), format!("{} fixtures, failing: {failed:?}", checks.len()));
}

fn criterion_13_reproducible_csv() {
    let mut spec = comparison_spec(1);
    spec.trials = 6;
    spec.iterations = 10;
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for k in 0..2 {
        let path = dir.path().join(format!("run{k}.csv"));
        let result = run_experiment(&spec).unwrap();
        write_csv(&result, std::fs::File::create(&path).unwrap()).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    let same = files[0] == files[1];
    let mut other = spec.clone();
    other.seed += 1;
    let mut buf = Vec::new();
    write_csv(&run_experiment(&other).unwrap(), &mut buf).unwrap();
    report(
        "13",
        same && buf != files[0],
        format!("{} bytes, identical reruns: {same}, different seed differs: {}", files[0].len(), buf != files[0]),
    );
}

const CHECKS: &[(&str, fn())] = &[
    ("criterion_01_unbiasedness", criterion_01_unbiasedness),
    ("criterion_02_full_observation_reduction", criterion_02_full_observation_reduction),
    ("criterion_03_projection", criterion_03_projection),
    ("criterion_04_design_problem", criterion_04_design_problem),
    ("criterion_05_h_norm_inequality", criterion_05_h_norm_inequality),
    ("criterion_06_effective_rank_identity", criterion_06_effective_rank_identity),
    ("criterion_07_error_decay", criterion_07_error_decay),
    ("criterion_08_designed_beats_uniform", criterion_08_designed_beats_uniform),
    ("criterion_08_designed_tracks_full_data", criterion_08_designed_tracks_full_data),
    ("criterion_09_active_matches_designed", criterion_09_active_matches_designed),
    ("criterion_10_noise_narrows_the_gap", criterion_10_noise_narrows_the_gap),
    ("criterion_11_mnist_statistics", criterion_11_mnist_statistics),
    ("criterion_12_idx_parser", criterion_12_idx_parser),
    ("criterion_13_reproducible_csv", criterion_13_reproducible_csv),
];

fn main() {
    // `report` prints its own verdict; other panics are printed below.
    panic::set_hook(Box::new(|_| {}));
    let mut failed = Vec::new();
    for (name, check) in CHECKS {
        if let Err(payload) = panic::catch_unwind(check) {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            if !msg.starts_with("criterion ") {
                println!("{name}: FAIL | panicked: {msg}");
            }
            failed.push(*name);
        }
    }
    println!("\nacceptance: {} of {} checks passed", CHECKS.len() - failed.len(), CHECKS.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
