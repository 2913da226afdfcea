//! Multivariate-normal probit machinery: the base probit configuration, the
//! standardized correlation transform, the CDF in one to many dimensions,
//! and its partial derivatives.
//!
//! These pieces together evaluate the closed-form Gaussian expectation of
//! the probit surrogate that approximates softmax outputs: the expectation
//! of an (n-1)-variable normal CDF under an independent Gaussian input is
//! again a normal CDF, at standardized limits and with a standardized
//! correlation matrix.

mod bivariate;
mod genz;
mod scalar;

pub use bivariate::bvn_cdf;
pub use genz::MvnOpts;
pub use scalar::{norm_cdf, norm_pdf, norm_quantile};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauss::{min_eigenvalue, SYMMETRY_TOL};

/// Limits at least this large are treated as effectively infinite and
/// marginalized away before integration.
const SATURATION: f64 = 8.0;

/// Returns the classical probit-sigmoid matching scale `sqrt(pi/8)`.
pub fn default_lambda() -> f64 {
    (std::f64::consts::PI / 8.0).sqrt()
}

/// Default surrogate scale for three or more classes: the mean-squared-error
/// minimizer of the surrogate against the exact softmax over the standard
/// calibration lattice (`[-6, 6]` per axis, 11 points), as produced by the
/// calibration routine with shared correlation 0.5. The classical
/// `sqrt(pi/8)` scale overshoots in the multiclass setting and would exceed
/// the advertised 0.02 moment-accuracy budget.
pub const MULTICLASS_LAMBDA: f64 = 0.5728;

/// Scale and correlation parameters of the base probit surrogate for an
/// `n`-class softmax: the surrogate CDF has `n - 1` variables with zero mean,
/// unit variances, and correlations `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbitConfig {
    lambda: f64,
    rho: DMatrix<f64>,
}

impl ProbitConfig {
    /// Validated construction from an explicit correlation matrix of the
    /// `n - 1` surrogate variables.
    pub fn new(lambda: f64, rho: DMatrix<f64>) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::param(
                "lambda",
                format!("must be positive, got {lambda}"),
            ));
        }
        let m = rho.nrows();
        if m == 0 || rho.ncols() != m {
            return Err(Error::dims("ProbitConfig rho", m.max(1), rho.ncols()));
        }
        for i in 0..m {
            if (rho[(i, i)] - 1.0).abs() > SYMMETRY_TOL {
                return Err(Error::param("rho", "diagonal entries must equal 1"));
            }
            for j in (i + 1)..m {
                let v = rho[(i, j)];
                if (v - rho[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::param("rho", "matrix must be symmetric"));
                }
                if !(v.is_finite() && v.abs() < 1.0) {
                    return Err(Error::param(
                        "rho",
                        format!("off-diagonal correlations must lie in (-1, 1), got {v}"),
                    ));
                }
            }
        }
        if min_eigenvalue(&rho) < -SYMMETRY_TOL {
            return Err(Error::param("rho", "correlation matrix is not PSD"));
        }
        Ok(ProbitConfig { lambda, rho })
    }

    /// Configuration with one shared correlation for all variable pairs.
    pub fn equicorrelated(n_classes: usize, lambda: f64, rho: f64) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::param("n_classes", "need at least two classes"));
        }
        let m = n_classes - 1;
        let mat = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { rho });
        ProbitConfig::new(lambda, mat)
    }

    /// Default configuration: shared `rho = 0.5` with `lambda = sqrt(pi/8)`
    /// in the two-class case (the classical probit-sigmoid match) and the
    /// lattice-calibrated [`MULTICLASS_LAMBDA`] otherwise.
    pub fn default_for(n_classes: usize) -> Self {
        let lambda = if n_classes == 2 {
            default_lambda()
        } else {
            MULTICLASS_LAMBDA
        };
        ProbitConfig::equicorrelated(n_classes, lambda, 0.5)
            .expect("default configuration is always valid")
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rho(&self) -> &DMatrix<f64> {
        &self.rho
    }

    pub fn n_classes(&self) -> usize {
        self.rho.nrows() + 1
    }
}

/// Square symmetric matrix with unit diagonal and entries in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix(DMatrix<f64>);

impl CorrelationMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(Error::dims("CorrelationMatrix", n.max(1), m.ncols()));
        }
        for i in 0..n {
            if (m[(i, i)] - 1.0).abs() > SYMMETRY_TOL {
                return Err(Error::param("corr", "diagonal entries must equal 1"));
            }
            for j in (i + 1)..n {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::param("corr", "matrix must be symmetric"));
                }
                if !m[(i, j)].is_finite() || m[(i, j)].abs() > 1.0 + 1e-12 {
                    return Err(Error::param(
                        "corr",
                        format!("entries must lie in [-1, 1], got {}", m[(i, j)]),
                    ));
                }
            }
        }
        let mut m = m;
        for v in m.iter_mut() {
            *v = v.clamp(-1.0, 1.0);
        }
        Ok(CorrelationMatrix(m))
    }

    pub fn identity(n: usize) -> Self {
        CorrelationMatrix(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Standardized correlation of the difference variables around class `j`
/// (zero-based): entry (tau, tau') is
/// `(rho + v_j) / sqrt((1 + v_j + v_tau)(1 + v_j + v_tau'))`
/// where `v` are the input variances, already scaled by `lambda^2` by the
/// caller, and the `rho` index skips class `j`.
pub fn std_correlation(
    cfg: &ProbitConfig,
    var_z: &DVector<f64>,
    j: usize,
) -> Result<CorrelationMatrix> {
    let n = cfg.n_classes();
    if var_z.len() != n {
        return Err(Error::dims("std_correlation", n, var_z.len()));
    }
    if j >= n {
        return Err(Error::param(
            "j",
            format!("class index {j} out of range for {n} classes"),
        ));
    }
    if let Some(v) = var_z.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::param(
            "var_z",
            format!("variance must be >= 0, got {v}"),
        ));
    }

    let others: Vec<usize> = (0..n).filter(|&t| t != j).collect();
    let vj = var_z[j];
    let m = n - 1;
    let mat = DMatrix::from_fn(m, m, |a, b| {
        if a == b {
            return 1.0;
        }
        let (ta, tb) = (others[a], others[b]);
        let base = cfg.rho[(shift_index(ta, j), shift_index(tb, j))];
        (base + vj) / (((1.0 + vj + var_z[ta]) * (1.0 + vj + var_z[tb])).sqrt())
    });
    CorrelationMatrix::new(mat)
}

/// Maps a class index to its position in the base correlation matrix, which
/// is indexed over the classes other than `j`.
#[inline]
fn shift_index(tau: usize, j: usize) -> usize {
    if tau < j {
        tau
    } else {
        tau - 1
    }
}

/// `P(X <= upper)` for `X ~ N(0, corr)` with the crate's default seed and
/// per-dimension accuracy target. Result is clamped to [0, 1].
pub fn mvn_cdf(upper: &[f64], corr: &CorrelationMatrix) -> Result<f64> {
    mvn_cdf_with(upper, corr, &MvnOpts::default_for_dim(upper.len()))
}

/// As [`mvn_cdf`] with explicit seed/tolerance controls for the
/// quasi-Monte Carlo path used above two dimensions.
pub fn mvn_cdf_with(upper: &[f64], corr: &CorrelationMatrix, opts: &MvnOpts) -> Result<f64> {
    if upper.is_empty() {
        return Err(Error::param("upper", "need at least one variable"));
    }
    if corr.dim() != upper.len() {
        return Err(Error::dims("mvn_cdf", upper.len(), corr.dim()));
    }
    if upper.iter().any(|u| u.is_nan()) {
        return Err(Error::param("upper", "limits must not be NaN"));
    }
    if upper.iter().any(|&u| u <= -SATURATION) {
        return Ok(0.0);
    }

    // Effectively-infinite limits marginalize away exactly.
    let kept: Vec<usize> = (0..upper.len())
        .filter(|&i| upper[i] < SATURATION)
        .collect();
    match kept.len() {
        0 => Ok(1.0),
        1 => Ok(norm_cdf(upper[kept[0]])),
        2 => {
            let r = corr.as_matrix()[(kept[0], kept[1])];
            Ok(bvn_cdf(upper[kept[0]], upper[kept[1]], r))
        }
        m => {
            let sub_upper: Vec<f64> = kept.iter().map(|&i| upper[i]).collect();
            let sub_corr = DMatrix::from_fn(m, m, |a, b| corr.as_matrix()[(kept[a], kept[b])]);
            let (est, _err) = genz::qmc_mvn_cdf(&sub_upper, &sub_corr, opts)?;
            Ok(est)
        }
    }
}

/// Partial derivative of the CDF with respect to one upper limit:
/// the standard-normal density at that limit times the CDF of the remaining
/// coordinates conditioned on it. Always nonnegative.
pub fn mvn_cdf_partial(upper: &[f64], corr: &CorrelationMatrix, i: usize) -> Result<f64> {
    mvn_cdf_partial_with(
        upper,
        corr,
        i,
        &MvnOpts::default_for_dim(upper.len().saturating_sub(1)),
    )
}

pub fn mvn_cdf_partial_with(
    upper: &[f64],
    corr: &CorrelationMatrix,
    i: usize,
    opts: &MvnOpts,
) -> Result<f64> {
    let m = upper.len();
    if corr.dim() != m {
        return Err(Error::dims("mvn_cdf_partial", m, corr.dim()));
    }
    if i >= m {
        return Err(Error::param(
            "i",
            format!("coordinate {i} out of range for {m} variables"),
        ));
    }
    let density = norm_pdf(upper[i]);
    if m == 1 {
        return Ok(density);
    }

    // Condition the remaining coordinates on coordinate i sitting exactly at
    // its limit. Correlations of +-1 collapse the conditional coordinate to a
    // point: the constraint is then either certain or impossible.
    let mut kept = Vec::with_capacity(m - 1);
    for k in (0..m).filter(|&k| k != i) {
        let c = corr.as_matrix()[(k, i)];
        let s2 = 1.0 - c * c;
        if s2 < 1e-14 {
            if upper[k] - c * upper[i] >= 0.0 {
                continue;
            }
            return Ok(0.0);
        }
        kept.push((k, c, s2.sqrt()));
    }
    if kept.is_empty() {
        return Ok(density);
    }

    let cond_upper: Vec<f64> = kept
        .iter()
        .map(|&(k, c, s)| (upper[k] - c * upper[i]) / s)
        .collect();
    let q = kept.len();
    let cond_corr = DMatrix::from_fn(q, q, |a, b| {
        if a == b {
            return 1.0;
        }
        let (ka, ca, sa) = kept[a];
        let (kb, cb, sb) = kept[b];
        ((corr.as_matrix()[(ka, kb)] - ca * cb) / (sa * sb)).clamp(-1.0, 1.0)
    });
    let tail = mvn_cdf_with(&cond_upper, &CorrelationMatrix::new(cond_corr)?, opts)?;
    Ok(density * tail)
}

/// Closed form of the Gaussian expectation of the probit surrogate for class
/// `j`: the CDF evaluated at `lambda (mu_j - mu_tau) / sqrt(1 + v_j + v_tau)`
/// with the standardized correlation, where `v = lambda^2 var`.
pub fn gaussian_probit_integral(
    mu_z: &DVector<f64>,
    var_z: &DVector<f64>,
    cfg: &ProbitConfig,
    j: usize,
) -> Result<f64> {
    let (upper, corr) = standardized_probit_args(mu_z, var_z, cfg, j)?;
    mvn_cdf(&upper, &corr)
}

/// Standardized upper limits and correlation for class `j`; shared by the
/// mean and derivative estimates.
pub(crate) fn standardized_probit_args(
    mu_z: &DVector<f64>,
    var_z: &DVector<f64>,
    cfg: &ProbitConfig,
    j: usize,
) -> Result<(Vec<f64>, CorrelationMatrix)> {
    let n = cfg.n_classes();
    if mu_z.len() != n {
        return Err(Error::dims("gaussian_probit_integral mu", n, mu_z.len()));
    }
    if var_z.len() != n {
        return Err(Error::dims("gaussian_probit_integral var", n, var_z.len()));
    }
    let lambda = cfg.lambda();
    let scaled = DVector::from_iterator(n, var_z.iter().map(|v| lambda * lambda * v));
    let corr = std_correlation(cfg, &scaled, j)?;
    let upper: Vec<f64> = (0..n)
        .filter(|&t| t != j)
        .map(|t| lambda * (mu_z[j] - mu_z[t]) / (1.0 + scaled[j] + scaled[t]).sqrt())
        .collect();
    Ok((upper, corr))
}
