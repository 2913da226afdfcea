//! Closed-form output moments for the two activation families: piecewise
//! linear (hidden layers) and softmax (output layer).
//!
//! For a Gaussian pre-activation the piecewise-linear case has exact
//! moments in terms of the univariate normal CDF and density. The softmax
//! case replaces the softmax of class `j` by a probit surrogate whose
//! Gaussian expectation is a multivariate normal CDF at standardized
//! arguments; variances and covariances then follow from the expected
//! derivatives of the surrogate with respect to the logit differences.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauss::GaussianDiag;
use crate::mvn::{
    mvn_cdf, mvn_cdf_partial, norm_cdf, norm_pdf, standardized_probit_args, CorrelationMatrix,
    ProbitConfig,
};

/// Parameters of `f(z) = max(alpha z, beta z)`; ReLU is `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PwlParams {
    alpha: f64,
    beta: f64,
}

impl PwlParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
            return Err(Error::param(
                "alpha",
                format!("must lie in [0, 1], got {alpha}"),
            ));
        }
        if !(beta.is_finite() && beta >= alpha) {
            return Err(Error::param(
                "beta",
                format!("must satisfy beta >= alpha, got {beta}"),
            ));
        }
        Ok(PwlParams { alpha, beta })
    }

    pub fn relu() -> Self {
        PwlParams {
            alpha: 0.0,
            beta: 1.0,
        }
    }

    pub fn leaky(alpha: f64) -> Result<Self> {
        PwlParams::new(alpha, 1.0)
    }

    pub fn identity() -> Self {
        PwlParams {
            alpha: 1.0,
            beta: 1.0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Output mean, output covariance, and input-output cross-covariance of one
/// layer: the bundle consumed by the conditioning step of the backward pass.
///
/// `cov_zy` has one row per pre-activation coordinate and one column per
/// output coordinate; softmax layers have one output fewer than
/// pre-activations (the last class is implicit).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTriple {
    mean_y: DVector<f64>,
    cov_y: DMatrix<f64>,
    cov_zy: DMatrix<f64>,
}

impl MomentTriple {
    pub fn new(mean_y: DVector<f64>, cov_y: DMatrix<f64>, cov_zy: DMatrix<f64>) -> Result<Self> {
        let m = mean_y.len();
        if cov_y.nrows() != m || cov_y.ncols() != m {
            return Err(Error::dims(
                "MomentTriple cov_y",
                m,
                cov_y.nrows().max(cov_y.ncols()),
            ));
        }
        if cov_zy.ncols() != m {
            return Err(Error::dims("MomentTriple cov_zy", m, cov_zy.ncols()));
        }
        for i in 0..m {
            for j in (i + 1)..m {
                if (cov_y[(i, j)] - cov_y[(j, i)]).abs() > crate::gauss::SYMMETRY_TOL {
                    return Err(Error::param("cov_y", "output covariance must be symmetric"));
                }
            }
        }
        let mut cov_y = cov_y;
        for i in 0..m {
            let v = cov_y[(i, i)];
            if v < -1e-10 {
                return Err(Error::param(
                    "cov_y",
                    format!("negative output variance {v} beyond tolerance"),
                ));
            }
            if v < 0.0 {
                cov_y[(i, i)] = 0.0;
            }
        }
        Ok(MomentTriple {
            mean_y,
            cov_y,
            cov_zy,
        })
    }

    pub fn y_dim(&self) -> usize {
        self.mean_y.len()
    }

    pub fn z_dim(&self) -> usize {
        self.cov_zy.nrows()
    }

    pub fn mean_y(&self) -> &DVector<f64> {
        &self.mean_y
    }

    pub fn cov_y(&self) -> &DMatrix<f64> {
        &self.cov_y
    }

    pub fn cov_zy(&self) -> &DMatrix<f64> {
        &self.cov_zy
    }
}

/// Expected derivatives of the softmax surrogate with respect to the logit
/// differences: `d[(j, i)]` estimates `E{ d s(z, j) / d (z_j - z_i) }` for
/// `i != j`, with a zero diagonal. All entries are nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxDerivs {
    d: DMatrix<f64>,
}

impl SoftmaxDerivs {
    pub fn dim(&self) -> usize {
        self.d.nrows()
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.d[(j, i)]
    }

    /// `sum_{i != j} d[(j, i)]`, the estimate of `E{ y_j (1 - y_j) }`.
    pub fn row_sum(&self, j: usize) -> f64 {
        self.d.row(j).sum()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d
    }
}

/// Counters for the numerical guard rails taken while matching moments.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MomentEvents {
    /// Estimated output variances that came out marginally negative and were
    /// clamped to zero.
    pub negative_variance_clamps: u32,
}

/// Exact output moments of `max(alpha z, beta z)` applied per coordinate to
/// an independent Gaussian vector. Off-diagonals are zero.
///
/// Deterministic coordinates (zero variance) use the limiting form: the CDF
/// factor becomes a step in the mean and the density terms vanish, which
/// reproduces the exact deterministic activation moments.
pub fn pwl_moments(z: &GaussianDiag, p: &PwlParams) -> MomentTriple {
    let n = z.dim();
    let (alpha, beta) = (p.alpha(), p.beta());
    let mut mean_y = DVector::zeros(n);
    let mut cov_y = DMatrix::zeros(n, n);
    let mut cov_zy = DMatrix::zeros(n, n);

    for j in 0..n {
        let mu = z.mean()[j];
        let var = z.var()[j];
        let sigma = var.sqrt();
        let e1 = mu;
        let e2 = mu * mu + var;
        let (cdf, pdf) = if sigma > 0.0 {
            let r = mu / sigma;
            (norm_cdf(r), norm_pdf(r))
        } else {
            (step(mu), 0.0)
        };

        let mean = alpha * e1 + (beta - alpha) * (e1 * cdf + sigma * pdf);
        let second =
            alpha * alpha * e2 + (beta * beta - alpha * alpha) * (e2 * cdf + mu * sigma * pdf);
        let cross = alpha * e2 + (beta - alpha) * (e2 * cdf + mu * sigma * pdf);

        mean_y[j] = mean;
        cov_y[(j, j)] = (second - mean * mean).max(0.0);
        cov_zy[(j, j)] = cross - mu * mean;
    }

    MomentTriple::new(mean_y, cov_y, cov_zy).expect("per-coordinate moments are well formed")
}

fn step(mu: f64) -> f64 {
    if mu > 0.0 {
        1.0
    } else if mu < 0.0 {
        0.0
    } else {
        0.5
    }
}

/// Expected derivatives of the softmax surrogate for every ordered class
/// pair: entry `(j, i)` is the CDF partial derivative at the standardized
/// arguments for class `j`, times `l / sqrt(1 + l^2 var_j + l^2 var_i)`.
/// The leading `l` is the chain-rule factor from differentiating with
/// respect to the unscaled logit difference.
pub fn softmax_deriv_expectations(z: &GaussianDiag, cfg: &ProbitConfig) -> Result<SoftmaxDerivs> {
    let n = z.dim();
    if n < 2 {
        return Err(Error::param("z", "softmax needs at least two classes"));
    }
    if cfg.n_classes() != n {
        return Err(Error::dims(
            "softmax_deriv_expectations",
            n,
            cfg.n_classes(),
        ));
    }
    let lambda = cfg.lambda();
    let l2 = lambda * lambda;
    let mut d = DMatrix::zeros(n, n);
    for j in 0..n {
        let (upper, corr) = standardized_probit_args(z.mean(), z.var(), cfg, j)?;
        for i in (0..n).filter(|&i| i != j) {
            let pos = if i < j { i } else { i - 1 };
            let scale = lambda / (1.0 + l2 * z.var()[j] + l2 * z.var()[i]).sqrt();
            d[(j, i)] = (scale * mvn_cdf_partial(&upper, &corr, pos)?).max(0.0);
        }
    }
    Ok(SoftmaxDerivs { d })
}

/// Moment-matched softmax output: `n - 1` modeled classes for an `n`-class
/// pre-activation (the last class carries the remaining mass).
pub fn softmax_moments(z: &GaussianDiag, cfg: &ProbitConfig) -> Result<MomentTriple> {
    softmax_moments_traced(z, cfg).map(|(m, _)| m)
}

/// As [`softmax_moments`], also reporting the numerical guard-rail events.
pub fn softmax_moments_traced(
    z: &GaussianDiag,
    cfg: &ProbitConfig,
) -> Result<(MomentTriple, MomentEvents)> {
    let n = z.dim();
    if n < 2 {
        return Err(Error::param("z", "softmax needs at least two classes"));
    }
    if cfg.n_classes() != n {
        return Err(Error::dims("softmax_moments", n, cfg.n_classes()));
    }
    let m = n - 1;
    let mut events = MomentEvents::default();

    let mut mean_y = DVector::zeros(m);
    for j in 0..m {
        mean_y[j] = crate::mvn::gaussian_probit_integral(z.mean(), z.var(), cfg, j)?;
    }

    let derivs = softmax_deriv_expectations(z, cfg)?;

    let mut cov_y = DMatrix::zeros(m, m);
    for j in 0..m {
        let raw = mean_y[j] - mean_y[j] * mean_y[j] - derivs.row_sum(j);
        if raw < 0.0 {
            events.negative_variance_clamps += 1;
            cov_y[(j, j)] = 0.0;
        } else {
            cov_y[(j, j)] = raw;
        }
        for i in 0..j {
            // The two derivative estimates of E{y_i y_j} agree only up to the
            // surrogate's approximation error; averaging keeps Sigma_y symmetric.
            let pair = 0.5 * (derivs.get(j, i) + derivs.get(i, j));
            let value = -mean_y[i] * mean_y[j] + pair;
            cov_y[(i, j)] = value;
            cov_y[(j, i)] = value;
        }
    }

    let mut cov_zy = DMatrix::zeros(n, m);
    for j in 0..m {
        for i in 0..n {
            cov_zy[(i, j)] = if i == j {
                z.var()[j] * derivs.row_sum(j)
            } else {
                -z.var()[i] * derivs.get(j, i)
            };
        }
    }

    Ok((MomentTriple::new(mean_y, cov_y, cov_zy)?, events))
}

/// Exact `n`-class softmax of a deterministic logit-difference vector
/// `theta`, i.e. `1 / (1 + sum_t exp(-theta_t))`.
pub fn softmax_from_differences(theta: &DVector<f64>) -> f64 {
    1.0 / (1.0 + theta.iter().map(|t| (-t).exp()).sum::<f64>())
}

/// Default calibration lattice: `points_per_axis` values per coordinate,
/// uniformly spaced over `[-half_width, half_width]^(n-1)`.
pub fn calibration_grid(
    n_classes: usize,
    half_width: f64,
    points_per_axis: usize,
) -> Vec<DVector<f64>> {
    let dim = n_classes - 1;
    let axis: Vec<f64> = (0..points_per_axis)
        .map(|i| -half_width + 2.0 * half_width * i as f64 / (points_per_axis - 1) as f64)
        .collect();
    let mut grid = Vec::with_capacity(axis.len().pow(dim as u32));
    let mut idx = vec![0usize; dim];
    loop {
        grid.push(DVector::from_iterator(dim, idx.iter().map(|&i| axis[i])));
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < axis.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == dim {
                return grid;
            }
        }
    }
}

/// Fit the probit scale and the shared pair correlation so that the
/// surrogate CDF best matches the exact softmax on a grid of deterministic
/// logit-difference vectors, by mean squared error.
///
/// Coordinate descent with golden-section line searches, starting from the
/// defaults; a line-search result is accepted only when it strictly improves
/// the loss, so a flat loss surface returns the default configuration.
pub fn calibrate_probit(n_classes: usize, grid: &[DVector<f64>]) -> Result<ProbitConfig> {
    if n_classes < 2 {
        return Err(Error::param("n_classes", "need at least two classes"));
    }
    if grid.is_empty() {
        return Err(Error::param("grid", "calibration grid must be nonempty"));
    }
    let dim = n_classes - 1;
    if let Some(p) = grid.iter().find(|p| p.len() != dim) {
        return Err(Error::dims("calibrate_probit grid", dim, p.len()));
    }
    let targets: Vec<f64> = grid.iter().map(softmax_from_differences).collect();

    let loss = |lambda: f64, rho: f64| -> f64 {
        let cfg = match ProbitConfig::equicorrelated(n_classes, lambda, rho) {
            Ok(c) => c,
            Err(_) => return f64::INFINITY,
        };
        let corr = CorrelationMatrix::new(cfg.rho().clone()).expect("validated above");
        let mut acc = 0.0;
        for (theta, target) in grid.iter().zip(&targets) {
            let upper: Vec<f64> = theta.iter().map(|t| lambda * t).collect();
            match mvn_cdf(&upper, &corr) {
                Ok(p) => {
                    let diff = p - target;
                    acc += diff * diff;
                }
                Err(_) => return f64::INFINITY,
            }
        }
        acc / grid.len() as f64
    };

    const LAMBDA_RANGE: (f64, f64) = (0.05, 2.5);
    let rho_range = if n_classes >= 3 {
        Some((-1.0 / (n_classes as f64 - 2.0) + 1e-6, 0.999_999))
    } else {
        None
    };

    let mut lambda = ProbitConfig::default_for(n_classes).lambda();
    let mut rho = 0.5;
    let mut best = loss(lambda, rho);
    const MAX_SWEEPS: usize = 200;
    const IMPROVEMENT_TOL: f64 = 1e-15;

    for _ in 0..MAX_SWEEPS {
        let before = best;

        let (cand, cand_loss) = golden_min(|l| loss(l, rho), LAMBDA_RANGE.0, LAMBDA_RANGE.1, 80);
        if cand_loss < best - IMPROVEMENT_TOL {
            lambda = cand;
            best = cand_loss;
        }

        if let Some((lo, hi)) = rho_range {
            let (cand, cand_loss) = golden_min(|r| loss(lambda, r), lo, hi, 80);
            if cand_loss < best - IMPROVEMENT_TOL {
                rho = cand;
                best = cand_loss;
            }
        }

        if before - best <= IMPROVEMENT_TOL * before.max(1e-30) {
            return ProbitConfig::equicorrelated(n_classes, lambda, rho);
        }
    }
    Err(Error::CalibrationDiverged {
        sweeps: MAX_SWEEPS,
        best_mse: best,
    })
}

/// Golden-section search for the minimum of a unimodal function on [a, b].
fn golden_min(f: impl Fn(f64) -> f64, a: f64, b: f64, iters: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a, b);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        if (b - a).abs() < 1e-10 {
            break;
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn diag(mean: &[f64], var: &[f64]) -> GaussianDiag {
        GaussianDiag::new(
            DVector::from_column_slice(mean),
            DVector::from_column_slice(var),
        )
        .unwrap()
    }

    #[test]
    fn relu_standard_normal_moments() {
        let z = diag(&[0.0], &[1.0]);
        let t = pwl_moments(&z, &PwlParams::relu());
        assert_abs_diff_eq!(t.mean_y()[0], 0.3989422804014327, epsilon = 1e-12);
        assert_abs_diff_eq!(
            t.cov_y()[(0, 0)],
            0.5 - 1.0 / (2.0 * std::f64::consts::PI),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(t.cov_zy()[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn identity_activation_collapses() {
        let z = diag(&[-1.3, 0.0, 2.4], &[0.49, 0.0, 3.1]);
        let t = pwl_moments(&z, &PwlParams::identity());
        for j in 0..3 {
            assert_abs_diff_eq!(t.mean_y()[j], z.mean()[j], epsilon = 1e-12);
            assert_abs_diff_eq!(t.cov_y()[(j, j)], z.var()[j], epsilon = 1e-12);
            assert_abs_diff_eq!(t.cov_zy()[(j, j)], z.var()[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn deterministic_relu_is_exact() {
        let z = diag(&[1.5, -2.0, 0.0], &[0.0, 0.0, 0.0]);
        let t = pwl_moments(&z, &PwlParams::relu());
        assert_abs_diff_eq!(t.mean_y()[0], 1.5);
        assert_abs_diff_eq!(t.mean_y()[1], 0.0);
        assert_abs_diff_eq!(t.mean_y()[2], 0.0);
        for j in 0..3 {
            assert_eq!(t.cov_y()[(j, j)], 0.0);
            assert_eq!(t.cov_zy()[(j, j)], 0.0);
        }
    }

    #[test]
    fn binary_deriv_at_origin() {
        // Deterministic (0, 0) logits: d = lambda * pdf(0) = sqrt(pi/8)/sqrt(2 pi) = 1/4.
        let cfg = ProbitConfig::default_for(2);
        let z = diag(&[0.0, 0.0], &[0.0, 0.0]);
        let d = softmax_deriv_expectations(&z, &cfg).unwrap();
        assert_abs_diff_eq!(d.get(0, 1), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(d.get(1, 0), 0.25, epsilon = 1e-12);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn saturated_class_has_vanishing_derivs() {
        let cfg = ProbitConfig::default_for(3);
        let z = diag(&[-40.0, 0.0, 0.0], &[1e-6, 1e-6, 1e-6]);
        let d = softmax_deriv_expectations(&z, &cfg).unwrap();
        assert!(d.get(0, 1) <= 1e-9);
        assert!(d.get(0, 2) <= 1e-9);
    }

    #[test]
    fn symmetric_three_class_means() {
        let cfg = ProbitConfig::default_for(3);
        let z = diag(&[0.0, 0.0, 0.0], &[0.7, 0.7, 0.7]);
        let t = softmax_moments(&z, &cfg).unwrap();
        assert_abs_diff_eq!(t.mean_y()[0], 1.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(t.mean_y()[1], 1.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn binary_case_matches_sigmoid_formulas() {
        // With the second logit pinned at zero the general path must equal
        // the scalar sigmoid-approximation formulas exactly.
        let cfg = ProbitConfig::default_for(2);
        let lambda = cfg.lambda();
        for &(mu, var) in &[(0.3, 0.8), (-2.0, 0.04), (4.5, 3.2), (0.0, 1.0)] {
            let z = diag(&[mu, 0.0], &[var, 0.0]);
            let t = softmax_moments(&z, &cfg).unwrap();

            let s = (1.0 + lambda * lambda * var).sqrt();
            let arg = lambda * mu / s;
            let mean = norm_cdf(arg);
            // The estimated variance can dip below zero where the surrogate
            // and the logistic diverge; both routes clamp identically.
            let var_y = (mean - mean * mean - lambda * norm_pdf(arg) / s).max(0.0);
            let cov_ay = var * lambda * norm_pdf(arg) / s;

            assert_abs_diff_eq!(t.mean_y()[0], mean, epsilon = 1e-12);
            assert_abs_diff_eq!(t.cov_y()[(0, 0)], var_y, epsilon = 1e-12);
            let cov_from_triple = t.cov_zy()[(0, 0)] - t.cov_zy()[(1, 0)];
            assert_abs_diff_eq!(cov_from_triple, cov_ay, epsilon = 1e-12);
        }
    }

    #[test]
    fn calibrate_binary_brackets_classic_scale() {
        let grid = calibration_grid(2, 6.0, 11);
        let cfg = calibrate_probit(2, &grid).unwrap();
        assert!(
            cfg.lambda() > 0.55 && cfg.lambda() < 0.70,
            "lambda = {}",
            cfg.lambda()
        );
    }

    #[test]
    fn calibrate_degenerate_grid_keeps_default() {
        let grid = vec![dvector![0.0]];
        let cfg = calibrate_probit(2, &grid).unwrap();
        assert_abs_diff_eq!(cfg.lambda(), crate::mvn::default_lambda(), epsilon = 1e-12);
    }

    #[test]
    fn calibrate_three_class_no_worse_than_default() {
        let grid = calibration_grid(3, 6.0, 11);
        let cfg = calibrate_probit(3, &grid).unwrap();

        let mse = |c: &ProbitConfig| -> f64 {
            let corr = CorrelationMatrix::new(c.rho().clone()).unwrap();
            grid.iter()
                .map(|theta| {
                    let upper: Vec<f64> = theta.iter().map(|t| c.lambda() * t).collect();
                    let p = mvn_cdf(&upper, &corr).unwrap();
                    let t = softmax_from_differences(theta);
                    (p - t) * (p - t)
                })
                .sum::<f64>()
                / grid.len() as f64
        };
        assert!(mse(&cfg) <= mse(&ProbitConfig::default_for(3)) + 1e-15);
    }
}
