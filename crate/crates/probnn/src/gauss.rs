//! Gaussian vector types, linear moment propagation, joint-Gaussian
//! conditioning, and positive-semidefiniteness maintenance.
//!
//! Pre-activations are kept with diagonal covariance (independent weight
//! columns make the off-diagonals exactly zero); the conditioned
//! distribution after an observation is full.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::activations::MomentTriple;
use crate::error::{Error, Result};

/// Absolute tolerance used by all symmetry checks in the crate.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Diagonal inflation schedule applied to covariances that fail to factorize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterPolicy {
    /// First jitter magnitude tried.
    pub initial: f64,
    /// Largest jitter magnitude tried before giving up.
    pub max: f64,
    /// Multiplicative escalation step.
    pub factor: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy {
            initial: 1e-12,
            max: 1e-6,
            factor: 10.0,
        }
    }
}

impl JitterPolicy {
    /// Iterator over the escalating jitter magnitudes.
    fn ladder(&self) -> impl Iterator<Item = f64> + '_ {
        let mut eps = self.initial;
        std::iter::from_fn(move || {
            if eps > self.max * (1.0 + 1e-12) {
                None
            } else {
                let cur = eps;
                eps *= self.factor;
                Some(cur)
            }
        })
    }
}

/// Gaussian vector with independent coordinates (mean plus per-coordinate
/// variance). Houses a layer's pre-activation distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDiag {
    mean: DVector<f64>,
    var: DVector<f64>,
}

impl GaussianDiag {
    pub fn new(mean: DVector<f64>, var: DVector<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::dims("GaussianDiag", mean.len(), var.len()));
        }
        if let Some(v) = var.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::param(
                "var",
                format!("variance must be >= 0, got {v}"),
            ));
        }
        Ok(GaussianDiag { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn var(&self) -> &DVector<f64> {
        &self.var
    }
}

/// Gaussian vector with full covariance. Houses the conditioned
/// pre-activation distribution produced by [`condition_joint`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFull {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianFull {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::dims("GaussianFull", n, cov.nrows().max(cov.ncols())));
        }
        check_symmetric("GaussianFull", &cov)?;
        Ok(GaussianFull { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

/// Gaussian posterior over one neuron's weight column (bias folded into the
/// last coordinate when the owning layer augments its input).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPosterior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl WeightPosterior {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::dims(
                "WeightPosterior",
                n,
                cov.nrows().max(cov.ncols()),
            ));
        }
        check_symmetric("WeightPosterior", &cov)?;
        let cov = symmetrize(&cov);
        if min_eigenvalue(&cov) < -1e-9 {
            return Err(Error::param(
                "cov",
                "weight covariance is not positive semidefinite",
            ));
        }
        Ok(WeightPosterior { mean, cov })
    }

    /// Standard-normal posterior: zero mean, identity covariance.
    pub fn standard(dim: usize) -> Self {
        WeightPosterior {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

/// Result of [`ensure_psd`]: the repaired matrix plus the jitter that was
/// needed (0.0 when the input was already acceptable).
#[derive(Debug, Clone)]
pub struct Psd {
    pub matrix: DMatrix<f64>,
    pub jitter: f64,
}

/// Result of [`condition_joint`]: the conditioned distribution plus the
/// largest jitter spent on the observation-covariance solve and the
/// covariance repair.
#[derive(Debug, Clone)]
pub struct Conditioned {
    pub dist: GaussianFull,
    pub jitter: f64,
}

/// Propagate a deterministic input through independent Gaussian weight
/// columns: `mean[j] = input . mu_wj`, `var[j] = input^T Sigma_wj input`.
pub fn linear_propagate(input: &DVector<f64>, weights: &[WeightPosterior]) -> Result<GaussianDiag> {
    let n = weights.len();
    let mut mean = DVector::zeros(n);
    let mut var = DVector::zeros(n);
    for (j, w) in weights.iter().enumerate() {
        if w.dim() != input.len() {
            return Err(Error::dims("linear_propagate", w.dim(), input.len()));
        }
        mean[j] = input.dot(w.mean());
        // Quadratic form with a PSD matrix; tiny negative round-off is clamped.
        var[j] = (input.transpose() * w.cov() * input)[(0, 0)].max(0.0);
    }
    GaussianDiag::new(mean, var)
}

/// Condition a pre-activation distribution on an observed output through the
/// jointly Gaussian (z, y) moments:
///
/// `mu~ = mu_z + S_zy S_y^-1 (y_obs - mu_y)`,
/// `Sigma~ = Sigma_z - S_zy S_y^-1 S_zy^T`.
///
/// Innovations are column vectors. The observation covariance is solved via
/// Cholesky with the default jitter ladder; the conditioned covariance goes
/// through [`ensure_psd`].
pub fn condition_joint(
    z: &GaussianDiag,
    moments: &MomentTriple,
    observed_y: &DVector<f64>,
) -> Result<Conditioned> {
    condition_joint_with(z, moments, observed_y, &JitterPolicy::default())
}

pub fn condition_joint_with(
    z: &GaussianDiag,
    moments: &MomentTriple,
    observed_y: &DVector<f64>,
    policy: &JitterPolicy,
) -> Result<Conditioned> {
    let parts = condition_parts(z, moments, observed_y, policy)?;
    let cov = DMatrix::from_diagonal(z.var()) - &parts.subtracted;
    let psd = ensure_psd(&symmetrize(&cov), policy)?;
    Ok(Conditioned {
        dist: GaussianFull::new(parts.mean, psd.matrix)?,
        jitter: parts.jitter.max(psd.jitter),
    })
}

/// Conditioned mean and the PSD term subtracted from the prior covariance,
/// before any repair of the difference. The weight update consumes only the
/// diagonal of the conditioned covariance, which stays meaningful even when
/// approximation error in the moments makes the full difference indefinite.
pub(crate) struct ConditionParts {
    pub mean: DVector<f64>,
    /// `S_zy S_y^-1 S_zy^T`; positive semidefinite by construction.
    pub subtracted: DMatrix<f64>,
    pub jitter: f64,
}

pub(crate) fn condition_parts(
    z: &GaussianDiag,
    moments: &MomentTriple,
    observed_y: &DVector<f64>,
    policy: &JitterPolicy,
) -> Result<ConditionParts> {
    let n = z.dim();
    let m = moments.y_dim();
    if moments.z_dim() != n {
        return Err(Error::dims("condition_joint z", n, moments.z_dim()));
    }
    if observed_y.len() != m {
        return Err(Error::dims("condition_joint y", m, observed_y.len()));
    }

    let cov_zy = moments.cov_zy();
    let innovation = observed_y - moments.mean_y();

    let (chol, jitter) = observation_solver(moments.cov_y(), policy)?;
    let weighted_innovation = chol.solve(&innovation);
    let weighted_cross = chol.solve(&cov_zy.transpose());

    let mean = z.mean() + cov_zy * weighted_innovation;
    let subtracted = symmetrize(&(cov_zy * weighted_cross));
    Ok(ConditionParts {
        mean,
        subtracted,
        jitter,
    })
}

/// Moment matching leaves the estimated output covariance marginally
/// indefinite on a regular basis (the covariance estimates can overshoot the
/// Cauchy-Schwarz bound of the variance estimates by ~1e-3). A diagonal
/// jitter sized for rounding noise cannot absorb that, so when the plain
/// factorization fails the matrix is projected onto the PSD cone with an
/// eigenvalue floor relative to the variance scale. Indefiniteness
/// comparable to the variance scale itself still errors.
const OBSERVATION_EIG_FLOOR: f64 = 0.01;
const OBSERVATION_INDEFINITE_LIMIT: f64 = 0.5;

fn observation_solver(
    cov_y: &DMatrix<f64>,
    policy: &JitterPolicy,
) -> Result<(Cholesky<f64, nalgebra::Dyn>, f64)> {
    if let Some(chol) = Cholesky::new(cov_y.clone()) {
        return Ok((chol, 0.0));
    }
    let eig = SymmetricEigen::new(cov_y.clone());
    let min_eig = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let scale = cov_y.diagonal().sum() / cov_y.nrows() as f64;
    if !scale.is_finite() || scale <= 0.0 || min_eig < -OBSERVATION_INDEFINITE_LIMIT * scale {
        return Err(Error::JitterExhausted {
            context: "condition_joint",
            max_jitter: policy.max,
            min_eigenvalue: min_eig,
        });
    }
    let floor = OBSERVATION_EIG_FLOOR * scale;
    let m = cov_y.nrows();
    let repaired = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(floor)))
        * eig.eigenvectors.transpose();
    let perturbation = floor + (-min_eig).max(0.0);
    if let Some(chol) = Cholesky::new(symmetrize(&repaired)) {
        return Ok((chol, perturbation));
    }
    // Rounding in the reconstruction can still trip the factorization.
    for eps in policy.ladder() {
        let jittered = &repaired + DMatrix::from_diagonal_element(m, m, eps);
        if let Some(chol) = Cholesky::new(jittered) {
            return Ok((chol, perturbation + eps));
        }
    }
    Err(Error::JitterExhausted {
        context: "condition_joint",
        max_jitter: policy.max,
        min_eigenvalue: min_eig,
    })
}

/// Repair a nominally-PSD symmetric matrix: symmetrize, then add escalating
/// diagonal jitter until the smallest eigenvalue is nonnegative. Inputs that
/// are already PSD come back unchanged apart from symmetrization. Genuinely
/// indefinite inputs exhaust the ladder and error.
pub fn ensure_psd(m: &DMatrix<f64>, policy: &JitterPolicy) -> Result<Psd> {
    if m.nrows() != m.ncols() {
        return Err(Error::dims("ensure_psd", m.nrows(), m.ncols()));
    }
    check_symmetric("ensure_psd", m)?;
    let sym = symmetrize(m);
    let min_eig = min_eigenvalue(&sym);
    if min_eig >= 0.0 {
        return Ok(Psd {
            matrix: sym,
            jitter: 0.0,
        });
    }
    for eps in policy.ladder() {
        if min_eig + eps >= 0.0 {
            let n = sym.nrows();
            return Ok(Psd {
                matrix: &sym + DMatrix::from_diagonal_element(n, n, eps),
                jitter: eps,
            });
        }
    }
    Err(Error::JitterExhausted {
        context: "ensure_psd",
        max_jitter: policy.max,
        min_eigenvalue: min_eig,
    })
}

/// Cholesky factorization with the escalating-jitter fallback. Returns the
/// factorization together with the jitter that had to be applied.
pub(crate) fn cholesky_with_jitter(
    m: &DMatrix<f64>,
    policy: &JitterPolicy,
    context: &'static str,
) -> Result<(Cholesky<f64, nalgebra::Dyn>, f64)> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok((chol, 0.0));
    }
    let n = m.nrows();
    for eps in policy.ladder() {
        let jittered = m + DMatrix::from_diagonal_element(n, n, eps);
        if let Some(chol) = Cholesky::new(jittered) {
            return Ok((chol, eps));
        }
    }
    Err(Error::JitterExhausted {
        context,
        max_jitter: policy.max,
        min_eigenvalue: min_eigenvalue(m),
    })
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn check_symmetric(context: &'static str, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::param(
                    "cov",
                    format!(
                        "{context}: matrix is not symmetric at ({i},{j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    ),
                ));
            }
        }
    }
    Ok(())
}
