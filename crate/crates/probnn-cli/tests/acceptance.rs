//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its runtime. Tolerances are pinned in code.
//!
//! Criterion 7a (benchmark training accuracy >= 0.8) is asserted exactly as
//! stated even though the underlying model class cannot meet it on the
//! pinned dataset: the exact regularized MAP fit of a bias-free three-logit
//! softmax reaches the same 0.64 on these 25 points, because the residual
//! class occupies two opposite cones and arg-max regions of linear logits
//! are convex. The assertion is kept faithful rather than loosened; see the
//! failure message for the measured values.

use std::time::Instant;

use nalgebra::{dvector, DMatrix, DVector};
use probnn::activations::{pwl_moments, softmax_moments, PwlParams};
use probnn::gauss::GaussianDiag;
use probnn::mvn::{
    gaussian_probit_integral, mvn_cdf, mvn_cdf_partial, norm_cdf, norm_pdf, std_correlation,
    CorrelationMatrix, ProbitConfig,
};
use probnn::oracle::{
    mc_probit_deriv_lhs, mc_probit_integral_lhs, mc_pwl_moments, mc_softmax_moments, McConfig,
};
use probnn_cli::config::ExperimentConfig;
use probnn_cli::data::gen_data;
use probnn_cli::experiment::run_experiment;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pass(name: &str, started: Instant) {
    println!(
        "ACCEPTANCE {name}: PASS ({:.2}s)",
        started.elapsed().as_secs_f64()
    );
}

/// Criterion 1: the two-class moment path coincides with the scalar sigmoid
/// formulas to 1e-12 over 200 random inputs, in under 5 seconds.
#[test]
fn c1_sigmoid_reduction_equivalence() {
    let started = Instant::now();
    let cfg = ProbitConfig::default_for(2);
    let lambda = cfg.lambda();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..200 {
        let mu_a: f64 = rng.random_range(-5.0..5.0);
        let var_a: f64 = rng.random_range(1e-6..4.0);

        let z = GaussianDiag::new(dvector![mu_a, 0.0], dvector![var_a, 0.0]).unwrap();
        let t = softmax_moments(&z, &cfg).unwrap();

        let s = (1.0 + lambda * lambda * var_a).sqrt();
        let arg = lambda * mu_a / s;
        let mean = norm_cdf(arg);
        let var_y = (mean - mean * mean - lambda * norm_pdf(arg) / s).max(0.0);
        let cov_ay = var_a * lambda * norm_pdf(arg) / s;

        assert!((t.mean_y()[0] - mean).abs() <= 1e-12);
        assert!((t.cov_y()[(0, 0)] - var_y).abs() <= 1e-12);
        let got_cov_ay = t.cov_zy()[(0, 0)] - t.cov_zy()[(1, 0)];
        assert!((got_cov_ay - cov_ay).abs() <= 1e-12);
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "criterion 1 took {elapsed:.2}s (budget 5s)");
    pass("1 sigmoid reduction equivalence", started);
}

/// Random correlation matrix from a normalized Gram matrix.
fn random_correlation(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    if m == 1 {
        return DMatrix::identity(1, 1);
    }
    let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0f64..1.0));
    let mut g = &a * a.transpose() + DMatrix::identity(m, m) * 0.05;
    let d: Vec<f64> = (0..m).map(|i| g[(i, i)].sqrt()).collect();
    for i in 0..m {
        for j in 0..m {
            g[(i, j)] /= d[i] * d[j];
        }
    }
    for i in 0..m {
        g[(i, i)] = 1.0;
    }
    g
}

/// Criterion 2: the Gaussian-expectation identities for the surrogate CDF
/// and its derivative hold against Monte Carlo integration with a million
/// input draws, for 50 random configurations over 2 to 4 classes, with at
/// least 95% of the comparisons inside three standard errors, in under five
/// minutes.
#[test]
fn c2_probit_identities_vs_mc() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut checks = 0usize;
    let mut failures = 0usize;
    for case in 0..50usize {
        let n = 2 + case % 3;
        let cfg = ProbitConfig::new(1.0, random_correlation(&mut rng, n - 1)).unwrap();
        let mu = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let var = DVector::from_fn(n, |_, _| rng.random_range(0.1..2.0));
        let j = rng.random_range(0..n);
        let i = loop {
            let i = rng.random_range(0..n);
            if i != j {
                break i;
            }
        };

        // identity for the CDF expectation
        let closed = gaussian_probit_integral(&mu, &var, &cfg, j).unwrap();
        let mc = McConfig::new(1_000_000, 9_000 + case as u64).unwrap();
        let (est, se) = mc_probit_integral_lhs(&mu, &var, &cfg, j, &mc).unwrap();
        checks += 1;
        if (closed - est).abs() > 3.0 * se {
            failures += 1;
        }

        // identity for the derivative expectation
        let corr = std_correlation(&cfg, &var, j).unwrap();
        let upper: Vec<f64> = (0..n)
            .filter(|&t| t != j)
            .map(|t| (mu[j] - mu[t]) / (1.0 + var[j] + var[t]).sqrt())
            .collect();
        let pos = if i < j { i } else { i - 1 };
        let closed_d =
            mvn_cdf_partial(&upper, &corr, pos).unwrap() / (1.0 + var[j] + var[i]).sqrt();
        let (est_d, se_d) = mc_probit_deriv_lhs(&mu, &var, &cfg, j, i, &mc).unwrap();
        checks += 1;
        if (closed_d - est_d).abs() > 3.0 * se_d {
            failures += 1;
        }
    }
    let rate = 1.0 - failures as f64 / checks as f64;
    assert!(
        rate >= 0.95,
        "only {:.1}% of {checks} identity checks within 3 standard errors",
        rate * 100.0
    );
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        elapsed < 300.0,
        "criterion 2 took {elapsed:.2}s (budget 300s)"
    );
    pass("2 probit identities vs MC", started);
}

/// Criterion 3: three-class softmax moments with the default configuration
/// stay within max(3 standard errors, 0.02) of the Monte Carlo reference
/// over the mean/variance lattice, in under ten minutes.
#[test]
fn c3_softmax_moment_accuracy() {
    let started = Instant::now();
    let cfg = ProbitConfig::default_for(3);
    let levels = [-3.0, 0.0, 3.0];
    let variances = [0.1, 1.0, 2.0];
    let mut seed = 30_000u64;
    for &a in &levels {
        for &b in &levels {
            for &c in &levels {
                for &v in &variances {
                    seed += 1;
                    let mu = dvector![a, b, c];
                    let var = dvector![v, v, v];
                    let z = GaussianDiag::new(mu.clone(), var.clone()).unwrap();
                    let t = softmax_moments(&z, &cfg).unwrap();
                    let mc = McConfig::new(1_000_000, seed).unwrap();
                    let (mt, se) = mc_softmax_moments(&mu, &var, &mc).unwrap();
                    for j in 0..2 {
                        let tol = (3.0 * se.mean[j]).max(0.02);
                        assert!(
                            (t.mean_y()[j] - mt.mean_y()[j]).abs() <= tol,
                            "mean[{j}] at mu=({a},{b},{c}) v={v}: {} vs {}",
                            t.mean_y()[j],
                            mt.mean_y()[j]
                        );
                    }
                    for p in 0..2 {
                        for q in 0..2 {
                            let tol = (3.0 * se.cov[(p, q)]).max(0.02);
                            assert!(
                                (t.cov_y()[(p, q)] - mt.cov_y()[(p, q)]).abs() <= tol,
                                "cov[{p}{q}] at mu=({a},{b},{c}) v={v}: {} vs {}",
                                t.cov_y()[(p, q)],
                                mt.cov_y()[(p, q)]
                            );
                        }
                    }
                }
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        elapsed < 600.0,
        "criterion 3 took {elapsed:.2}s (budget 600s)"
    );
    pass("3 softmax moment accuracy", started);
}

/// Criterion 4: piecewise-linear moments match a 10^7-sample Monte Carlo
/// reference within three standard errors for ReLU and leaky slopes over
/// the mean/variance grid, in under two minutes.
#[test]
fn c4_pwl_moment_accuracy() {
    let started = Instant::now();
    let params = [PwlParams::relu(), PwlParams::leaky(0.1).unwrap()];
    let mut seed = 40_000u64;
    for p in &params {
        for &mu in &[-2.0, 0.0, 2.0] {
            for &var in &[0.25, 1.0, 4.0] {
                seed += 1;
                let z = GaussianDiag::new(dvector![mu], dvector![var]).unwrap();
                let t = pwl_moments(&z, p);
                let mc = McConfig::new(10_000_000, seed).unwrap();
                let (mt, se) = mc_pwl_moments(&dvector![mu], &dvector![var], p, &mc).unwrap();
                assert!(
                    (t.mean_y()[0] - mt.mean_y()[0]).abs() <= 3.0 * se.mean[0],
                    "mean at ({mu},{var},{p:?})"
                );
                assert!(
                    (t.cov_y()[(0, 0)] - mt.cov_y()[(0, 0)]).abs() <= 3.0 * se.cov[(0, 0)],
                    "variance at ({mu},{var},{p:?})"
                );
                assert!(
                    (t.cov_zy()[(0, 0)] - mt.cov_zy()[(0, 0)]).abs() <= 3.0 * se.cov_zy[(0, 0)],
                    "cross at ({mu},{var},{p:?})"
                );
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        elapsed < 120.0,
        "criterion 4 took {elapsed:.2}s (budget 120s)"
    );
    pass("4 pwl moment accuracy", started);
}

/// Criterion 5: the bivariate CDF reproduces the zero-mean orthant formula
/// 1/4 + asin(rho) / (2 pi) within 1e-6.
#[test]
fn c5_bivariate_orthant_exactness() {
    let started = Instant::now();
    for rho in [-0.9f64, -0.5, 0.0, 0.5, 0.9] {
        let corr = CorrelationMatrix::new(DMatrix::from_fn(
            2,
            2,
            |i, j| if i == j { 1.0 } else { rho },
        ))
        .unwrap();
        let got = mvn_cdf(&[0.0, 0.0], &corr).unwrap();
        let expected = 0.25 + rho.asin() / (2.0 * std::f64::consts::PI);
        assert!(
            (got - expected).abs() <= 1e-6,
            "rho={rho}: {got} vs {expected}"
        );
    }
    pass("5 bivariate orthant exactness", started);
}

/// Criterion 6: across a full benchmark training run every per-neuron
/// posterior variance diagonal is non-increasing within 1e-9 per step, with
/// zero violations.
#[test]
fn c6_posterior_contraction() {
    let started = Instant::now();
    let cfg = ExperimentConfig::default();
    let data = gen_data(cfg.m, &cfg.bounds, cfg.seed);
    let mut net = cfg.build_network().unwrap();
    let mut violations = 0usize;
    for (x, y) in &data.rows {
        let before: Vec<Vec<f64>> = net.posteriors()[0]
            .iter()
            .map(|p| p.cov().diagonal().iter().copied().collect())
            .collect();
        let (next, _report) = net.backward_update(x, y).unwrap();
        for (j, p) in next.posteriors()[0].iter().enumerate() {
            for (i, v) in p.cov().diagonal().iter().enumerate() {
                if *v > before[j][i] + 1e-9 {
                    violations += 1;
                }
            }
        }
        net = next;
    }
    assert_eq!(violations, 0, "{violations} posterior variance increases");
    pass("6 posterior contraction", started);
}

fn read_grid(path: &std::path::Path) -> Vec<[f64; 6]> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|line| {
            let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
            [v[0], v[1], v[2], v[3], v[4], v[5]]
        })
        .collect()
}

/// Criterion 7a: the benchmark run reaches at least 0.8 arg-max accuracy on
/// its 25 training points, in under a minute.
#[test]
fn c7a_benchmark_training_accuracy() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&ExperimentConfig::default(), dir.path()).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        elapsed < 60.0,
        "criterion 7 run took {elapsed:.2}s (budget 60s)"
    );
    let acc = outcome.report.train_accuracy.expect("nonempty dataset");
    assert!(
        acc >= 0.8,
        "training accuracy {acc:.3} below the 0.8 target. The exact regularized \
         MAP fit of this model class (three bias-free linear logits, identity prior) \
         reaches the same 0.64 on this dataset: the residual class occupies two \
         opposite cones, and arg-max regions of linear logits are convex, so no \
         posterior over these weights can label both cones correctly. The sequential \
         Bayesian run matches the exact-fit ceiling rather than the stated target."
    );
    pass("7a benchmark training accuracy", started);
}

/// Criterion 7b: the mean predictive variance of the first class over the
/// exported grid strictly decreases from the prior snapshot to the final one.
#[test]
fn c7b_benchmark_variance_contraction() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&ExperimentConfig::default(), dir.path()).unwrap();
    let first = read_grid(&dir.path().join("grid_step_0000.csv"));
    let last = read_grid(&dir.path().join("grid_step_0025.csv"));
    let mean = |rows: &[[f64; 6]], k: usize| -> f64 {
        rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64
    };
    assert!(
        mean(&last, 4) < mean(&first, 4),
        "var_y1 grid mean did not contract: {} -> {}",
        mean(&first, 4),
        mean(&last, 4)
    );
    assert!(first.iter().all(|r| r.iter().all(|v| v.is_finite())));
    assert_eq!(first.len(), 41 * 41);
    pass("7b benchmark variance contraction", started);
}

/// Criterion 7c: the centroid of the grid region predicted as class 1 lies
/// inside the true class-1 wedge.
#[test]
fn c7c_benchmark_class_one_centroid() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&ExperimentConfig::default(), dir.path()).unwrap();
    let last = read_grid(&dir.path().join("grid_step_0025.csv"));
    let mut cx = 0.0;
    let mut cy = 0.0;
    let mut count = 0usize;
    for r in &last {
        let probs = [r[2], r[3], (1.0 - r[2] - r[3]).max(0.0)];
        let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let label = probs.iter().position(|&p| p >= max - 1e-12).unwrap();
        if label == 0 {
            cx += r[0];
            cy += r[1];
            count += 1;
        }
    }
    assert!(count > 0, "no grid point predicted as class 1");
    cx /= count as f64;
    cy /= count as f64;
    assert!(
        cx + cy > 0.0 && -cx + cy > 0.0,
        "class-1 centroid ({cx:.3}, {cy:.3}) outside the true wedge"
    );
    pass("7c benchmark class-one centroid", started);
}

/// Criterion 8: two runs of the benchmark produce byte-identical grid
/// exports (and dataset/checkpoint artifacts).
#[test]
fn c8_benchmark_determinism() {
    let started = Instant::now();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_experiment(&ExperimentConfig::default(), dir_a.path()).unwrap();
    run_experiment(&ExperimentConfig::default(), dir_b.path()).unwrap();
    for name in [
        "grid_step_0000.csv",
        "grid_step_0012.csv",
        "grid_step_0025.csv",
        "dataset.csv",
        "checkpoint.json",
    ] {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert!(a == b, "{name} differs between identical runs");
    }
    pass("8 benchmark determinism", started);
}
