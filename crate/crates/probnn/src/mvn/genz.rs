//! Separation-of-variables quasi-Monte Carlo integrator for the
//! multivariate normal CDF in three or more dimensions.
//!
//! The integral is transformed through the Cholesky factor of the
//! correlation matrix into an integrand over the unit cube, which is then
//! averaged over a randomly shifted Richtmyer (Kronecker) point set. The
//! shifts come from an explicit seed, so every call is deterministic and
//! reentrant; the sample count grows until the error estimate meets the
//! requested tolerance.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scalar::{norm_cdf, norm_quantile};
use crate::error::{Error, Result};
use crate::gauss::{cholesky_with_jitter, JitterPolicy};

/// Tuning knobs for the quasi-Monte Carlo CDF evaluation.
#[derive(Debug, Clone, Copy)]
pub struct MvnOpts {
    /// Seed for the random shifts of the quasi-random point set.
    pub seed: u64,
    /// Absolute error target.
    pub abs_tol: f64,
    /// Hard cap on points per shift; the estimate is returned even when the
    /// target was not provably met.
    pub max_points_per_shift: usize,
}

impl MvnOpts {
    /// Defaults for a given dimension: 1e-6 up to three variables, 1e-4 above.
    pub fn default_for_dim(m: usize) -> Self {
        MvnOpts {
            seed: 0x9E37_79B9_7F4A_7C15,
            abs_tol: if m <= 3 { 1e-6 } else { 1e-4 },
            max_points_per_shift: 1 << 17,
        }
    }
}

const NUM_SHIFTS: usize = 12;
const FIRST_PRIMES: [u64; 20] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71,
];

/// Estimate `P(X <= upper)` for `X ~ N(0, corr)` with `m = upper.len() >= 2`.
/// Returns the estimate and a 3-sigma error bound across shifts.
pub fn qmc_mvn_cdf(upper: &[f64], corr: &DMatrix<f64>, opts: &MvnOpts) -> Result<(f64, f64)> {
    let m = upper.len();
    assert!(m >= 2, "qmc integrator needs at least two variables");
    if m - 1 > FIRST_PRIMES.len() {
        return Err(Error::param(
            "upper",
            format!("dimension {m} exceeds the supported maximum"),
        ));
    }

    // Sort variables by their limit so the most restrictive coordinates are
    // integrated first; this is the standard variance-reduction ordering.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| upper[a].total_cmp(&upper[b]));
    let b: Vec<f64> = order.iter().map(|&i| upper[i]).collect();
    let permuted = DMatrix::from_fn(m, m, |r, c| corr[(order[r], order[c])]);

    let (chol, _) = cholesky_with_jitter(&permuted, &JitterPolicy::default(), "mvn_cdf")?;
    let l = chol.l();

    let generators: Vec<f64> = FIRST_PRIMES[..m - 1]
        .iter()
        .map(|&p| (p as f64).sqrt().fract())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let shifts: Vec<Vec<f64>> = (0..NUM_SHIFTS)
        .map(|_| (0..m - 1).map(|_| rng.random::<f64>()).collect())
        .collect();

    let mut sums = [0.0f64; NUM_SHIFTS];
    let mut done = 0usize;
    let mut per_shift = 128usize;
    let mut y = vec![0.0f64; m - 1];

    loop {
        for (s, shift) in shifts.iter().enumerate() {
            let mut acc = 0.0;
            for k in done..per_shift {
                let kf = (k + 1) as f64;
                let f = integrand(&b, &l, shift, &generators, kf, &mut y);
                acc += f;
            }
            sums[s] += acc;
        }
        done = per_shift;

        let n = done as f64;
        let means: Vec<f64> = sums.iter().map(|s| s / n).collect();
        let est: f64 = means.iter().sum::<f64>() / NUM_SHIFTS as f64;
        let var: f64 =
            means.iter().map(|mu| (mu - est) * (mu - est)).sum::<f64>() / (NUM_SHIFTS as f64 - 1.0);
        let err = 3.0 * (var / NUM_SHIFTS as f64).sqrt();

        if err < opts.abs_tol || done >= opts.max_points_per_shift {
            return Ok((est.clamp(0.0, 1.0), err));
        }
        per_shift *= 2;
    }
}

#[inline]
fn integrand(
    b: &[f64],
    l: &DMatrix<f64>,
    shift: &[f64],
    generators: &[f64],
    kf: f64,
    y: &mut [f64],
) -> f64 {
    let m = b.len();
    let mut f = norm_cdf(b[0] / l[(0, 0)]);
    let mut e_prev = f;
    for i in 1..m {
        let w = (kf * generators[i - 1] + shift[i - 1]).fract();
        y[i - 1] = norm_quantile(w * e_prev);
        let mut dot = 0.0;
        for j in 0..i {
            dot += l[(i, j)] * y[j];
        }
        let e = norm_cdf((b[i] - dot) / l[(i, i)]);
        f *= e;
        e_prev = e;
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvn::bivariate::bvn_cdf;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    #[test]
    fn matches_bivariate_quadrature_in_two_dims() {
        let corr = dmatrix![1.0, 0.6; 0.6, 1.0];
        let opts = MvnOpts::default_for_dim(2);
        for &(x, y) in &[(0.0, 0.0), (0.5, -0.3), (-1.0, 2.0)] {
            let (est, err) = qmc_mvn_cdf(&[x, y], &corr, &opts).unwrap();
            assert!(err < 1e-5);
            assert_abs_diff_eq!(est, bvn_cdf(x, y, 0.6), epsilon = 1e-5);
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let corr = dmatrix![1.0, 0.5, 0.5; 0.5, 1.0, 0.5; 0.5, 0.5, 1.0];
        let opts = MvnOpts::default_for_dim(3);
        let (a, _) = qmc_mvn_cdf(&[0.3, -0.2, 1.1], &corr, &opts).unwrap();
        let (b, _) = qmc_mvn_cdf(&[0.3, -0.2, 1.1], &corr, &opts).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn trivariate_equicorrelated_orthant() {
        // For rho = 0.5 the orthant probability of three exchangeable
        // variables is exactly 1/4.
        let corr = dmatrix![1.0, 0.5, 0.5; 0.5, 1.0, 0.5; 0.5, 0.5, 1.0];
        let opts = MvnOpts::default_for_dim(3);
        let (est, err) = qmc_mvn_cdf(&[0.0, 0.0, 0.0], &corr, &opts).unwrap();
        assert!(err < 1e-5, "error estimate too large: {err}");
        assert_abs_diff_eq!(est, 0.25, epsilon = 2e-6);
    }
}
