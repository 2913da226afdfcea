//! Monte Carlo reference estimators for every closed-form estimate in the
//! crate. These are test oracles: nothing in the training or prediction
//! path calls them.
//!
//! Sampling is split into blocks; block `b` draws from a ChaCha stream
//! keyed by `(seed, b)`, so estimates are bit-reproducible regardless of
//! how the blocks are scheduled across threads. Standard errors come from
//! the spread of the per-block estimates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::activations::{MomentTriple, PwlParams};
use crate::error::{Error, Result};
use crate::mvn::{norm_pdf, CorrelationMatrix, ProbitConfig};
use crate::network::{Activation, NetworkState};

/// Sample count and RNG seed for one oracle run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
}

impl McConfig {
    pub fn new(samples: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::param("samples", "need at least one sample"));
        }
        Ok(McConfig { samples, seed })
    }
}

/// Standard errors matching the shape of a [`MomentTriple`].
#[derive(Debug, Clone)]
pub struct McStdErrs {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub cov_zy: DMatrix<f64>,
}

/// Empirical output moments of a sampled forward pass.
#[derive(Debug, Clone)]
pub struct McForward {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub se_mean: DVector<f64>,
}

const BLOCKS: usize = 100;

fn block_counts(samples: usize) -> Vec<usize> {
    let blocks = BLOCKS.min(samples);
    let base = samples / blocks;
    let rem = samples % blocks;
    (0..blocks).map(|b| base + usize::from(b < rem)).collect()
}

fn run_blocks<T, F>(seed: u64, counts: &[usize], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    counts
        .par_iter()
        .enumerate()
        .map(|(b, &count)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64 + 1);
            f(&mut rng, count)
        })
        .collect()
}

fn std_err(block_values: &[f64]) -> f64 {
    let b = block_values.len() as f64;
    if block_values.len() < 2 {
        return f64::INFINITY;
    }
    let mean = block_values.iter().sum::<f64>() / b;
    let var = block_values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (b - 1.0);
    (var / b).sqrt()
}

/// Raw accumulators for joint (z, y) moments; `m` outputs, `n` inputs.
struct RawSums {
    count: f64,
    sum_y: Vec<f64>,
    sum_yy: Vec<f64>,
    sum_z: Vec<f64>,
    sum_zy: Vec<f64>,
}

impl RawSums {
    fn new(n: usize, m: usize) -> Self {
        RawSums {
            count: 0.0,
            sum_y: vec![0.0; m],
            sum_yy: vec![0.0; m * m],
            sum_z: vec![0.0; n],
            sum_zy: vec![0.0; n * m],
        }
    }

    #[inline]
    fn push(&mut self, z: &[f64], y: &[f64]) {
        let m = y.len();
        self.count += 1.0;
        for j in 0..m {
            self.sum_y[j] += y[j];
            for i in 0..m {
                self.sum_yy[i * m + j] += y[i] * y[j];
            }
            for (i, zi) in z.iter().enumerate() {
                self.sum_zy[i * m + j] += zi * y[j];
            }
        }
        for (acc, v) in self.sum_z.iter_mut().zip(z) {
            *acc += v;
        }
    }

    fn merge(mut self, other: &RawSums) -> Self {
        self.count += other.count;
        for (a, b) in self.sum_y.iter_mut().zip(&other.sum_y) {
            *a += b;
        }
        for (a, b) in self.sum_yy.iter_mut().zip(&other.sum_yy) {
            *a += b;
        }
        for (a, b) in self.sum_z.iter_mut().zip(&other.sum_z) {
            *a += b;
        }
        for (a, b) in self.sum_zy.iter_mut().zip(&other.sum_zy) {
            *a += b;
        }
        self
    }

    /// Population moments: mean vector, output covariance, cross covariance.
    fn finalize(&self, n: usize, m: usize) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let c = self.count;
        let mean_y = DVector::from_fn(m, |j, _| self.sum_y[j] / c);
        let mean_z = DVector::from_fn(n, |i, _| self.sum_z[i] / c);
        let cov_y = DMatrix::from_fn(m, m, |i, j| {
            let raw = self.sum_yy[i * m + j] / c - mean_y[i] * mean_y[j];
            if i == j {
                raw.max(0.0)
            } else {
                raw
            }
        });
        let cov_zy = DMatrix::from_fn(n, m, |i, j| {
            self.sum_zy[i * m + j] / c - mean_z[i] * mean_y[j]
        });
        (mean_y, cov_y, cov_zy)
    }
}

fn triple_with_errors(
    n: usize,
    m: usize,
    blocks: Vec<RawSums>,
) -> Result<(MomentTriple, McStdErrs)> {
    let total = blocks
        .iter()
        .fold(RawSums::new(n, m), |acc, b| acc.merge(b));
    let (mean_y, cov_y, cov_zy) = total.finalize(n, m);

    let per_block: Vec<_> = blocks.iter().map(|b| b.finalize(n, m)).collect();
    let se_mean = DVector::from_fn(m, |j, _| {
        std_err(&per_block.iter().map(|(my, _, _)| my[j]).collect::<Vec<_>>())
    });
    let se_cov = DMatrix::from_fn(m, m, |i, j| {
        std_err(
            &per_block
                .iter()
                .map(|(_, cy, _)| cy[(i, j)])
                .collect::<Vec<_>>(),
        )
    });
    let se_cov_zy = DMatrix::from_fn(n, m, |i, j| {
        std_err(
            &per_block
                .iter()
                .map(|(_, _, czy)| czy[(i, j)])
                .collect::<Vec<_>>(),
        )
    });

    // Symmetrize rounding noise before the validated construction.
    let cov_y = (&cov_y + cov_y.transpose()) * 0.5;
    Ok((
        MomentTriple::new(mean_y, cov_y, cov_zy)?,
        McStdErrs {
            mean: se_mean,
            cov: se_cov,
            cov_zy: se_cov_zy,
        },
    ))
}

/// Exact softmax over all `n` classes, written into `y`.
#[inline]
fn softmax_into(z: &[f64], y: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (yi, zi) in y.iter_mut().zip(z) {
        *yi = (zi - max).exp();
        total += *yi;
    }
    for yi in y.iter_mut() {
        *yi /= total;
    }
}

/// Empirical softmax output moments under an independent Gaussian input:
/// the `n - 1` modeled outputs of the exact softmax, with standard errors.
pub fn mc_softmax_moments(
    mu_z: &DVector<f64>,
    var_z: &DVector<f64>,
    mc: &McConfig,
) -> Result<(MomentTriple, McStdErrs)> {
    let n = mu_z.len();
    if var_z.len() != n {
        return Err(Error::dims("mc_softmax_moments", n, var_z.len()));
    }
    if n < 2 {
        return Err(Error::param("mu_z", "softmax needs at least two classes"));
    }
    let m = n - 1;
    let mu: Vec<f64> = mu_z.iter().copied().collect();
    let sd: Vec<f64> = var_z.iter().map(|v| v.sqrt()).collect();

    let blocks = run_blocks(mc.seed, &block_counts(mc.samples), |rng, count| {
        let mut sums = RawSums::new(n, m);
        let mut z = vec![0.0; n];
        let mut y = vec![0.0; n];
        for _ in 0..count {
            for i in 0..n {
                let e: f64 = StandardNormal.sample(rng);
                z[i] = mu[i] + sd[i] * e;
            }
            softmax_into(&z, &mut y);
            sums.push(&z, &y[..m]);
        }
        sums
    });
    triple_with_errors(n, m, blocks)
}

/// Empirical moments of `max(alpha z, beta z)` applied per coordinate.
/// Off-diagonals are identically zero by coordinate independence.
pub fn mc_pwl_moments(
    mu_z: &DVector<f64>,
    var_z: &DVector<f64>,
    p: &PwlParams,
    mc: &McConfig,
) -> Result<(MomentTriple, McStdErrs)> {
    let n = mu_z.len();
    if var_z.len() != n {
        return Err(Error::dims("mc_pwl_moments", n, var_z.len()));
    }
    let mu: Vec<f64> = mu_z.iter().copied().collect();
    let sd: Vec<f64> = var_z.iter().map(|v| v.sqrt()).collect();
    let (alpha, beta) = (p.alpha(), p.beta());

    struct PwlSums {
        count: f64,
        sum_y: Vec<f64>,
        sum_y2: Vec<f64>,
        sum_z: Vec<f64>,
        sum_zy: Vec<f64>,
    }

    let blocks = run_blocks(mc.seed, &block_counts(mc.samples), |rng, count| {
        let mut s = PwlSums {
            count: 0.0,
            sum_y: vec![0.0; n],
            sum_y2: vec![0.0; n],
            sum_z: vec![0.0; n],
            sum_zy: vec![0.0; n],
        };
        for _ in 0..count {
            s.count += 1.0;
            for i in 0..n {
                let e: f64 = StandardNormal.sample(rng);
                let z = mu[i] + sd[i] * e;
                let y = (alpha * z).max(beta * z);
                s.sum_y[i] += y;
                s.sum_y2[i] += y * y;
                s.sum_z[i] += z;
                s.sum_zy[i] += z * y;
            }
        }
        s
    });

    let finalize = |s: &PwlSums| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let c = s.count;
        let mean: Vec<f64> = s.sum_y.iter().map(|v| v / c).collect();
        let var: Vec<f64> = (0..n)
            .map(|i| (s.sum_y2[i] / c - mean[i] * mean[i]).max(0.0))
            .collect();
        let cross: Vec<f64> = (0..n)
            .map(|i| s.sum_zy[i] / c - (s.sum_z[i] / c) * mean[i])
            .collect();
        (mean, var, cross)
    };

    let mut total = PwlSums {
        count: 0.0,
        sum_y: vec![0.0; n],
        sum_y2: vec![0.0; n],
        sum_z: vec![0.0; n],
        sum_zy: vec![0.0; n],
    };
    for b in &blocks {
        total.count += b.count;
        for i in 0..n {
            total.sum_y[i] += b.sum_y[i];
            total.sum_y2[i] += b.sum_y2[i];
            total.sum_z[i] += b.sum_z[i];
            total.sum_zy[i] += b.sum_zy[i];
        }
    }
    let (mean, var, cross) = finalize(&total);
    let per_block: Vec<_> = blocks.iter().map(&finalize).collect();

    type Moments = (Vec<f64>, Vec<f64>, Vec<f64>);
    let se = |pick: &dyn Fn(&Moments) -> &Vec<f64>, i: usize| -> f64 {
        std_err(&per_block.iter().map(|b| pick(b)[i]).collect::<Vec<_>>())
    };

    let triple = MomentTriple::new(
        DVector::from_vec(mean),
        DMatrix::from_diagonal(&DVector::from_vec(var)),
        DMatrix::from_diagonal(&DVector::from_vec(cross)),
    )?;
    let errs = McStdErrs {
        mean: DVector::from_fn(n, |i, _| se(&|b| &b.0, i)),
        cov: DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| se(&|b| &b.1, i))),
        cov_zy: DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| se(&|b| &b.2, i))),
    };
    Ok((triple, errs))
}

/// Factor a PSD matrix as `F F^T` through its symmetric eigendecomposition;
/// tolerates singular covariances (zero eigenvalues).
fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    DMatrix::from_fn(cov.nrows(), cov.ncols(), |r, c| {
        eig.eigenvectors[(r, c)] * eig.eigenvalues[c].max(0.0).sqrt()
    })
}

/// Sampled forward pass: weights drawn from their posteriors, activations
/// applied exactly, softmax outputs of the last layer accumulated.
pub fn mc_forward(net: &NetworkState, x: &DVector<f64>, mc: &McConfig) -> Result<McForward> {
    if x.len() != net.input_dim() {
        return Err(Error::dims("mc_forward", net.input_dim(), x.len()));
    }
    let n_out = net.n_classes() - 1;

    // Pre-factor every posterior covariance once.
    let factors: Vec<Vec<(DVector<f64>, DMatrix<f64>)>> = net
        .posteriors()
        .iter()
        .map(|cols| {
            cols.iter()
                .map(|p| (p.mean().clone(), psd_factor(p.cov())))
                .collect()
        })
        .collect();
    let layers = net.layers().to_vec();

    let blocks = run_blocks(mc.seed, &block_counts(mc.samples), |rng, count| {
        let mut sums = RawSums::new(n_out, n_out);
        let mut y_buf = Vec::new();
        for _ in 0..count {
            let mut value = x.clone();
            for (layer, cols) in layers.iter().zip(&factors) {
                let input = if layer.bias {
                    let mut v = DVector::zeros(value.len() + 1);
                    v.rows_mut(0, value.len()).copy_from(&value);
                    v[value.len()] = 1.0;
                    v
                } else {
                    value.clone()
                };
                let mut z = DVector::zeros(layer.width);
                for (j, (mean, factor)) in cols.iter().enumerate() {
                    let eps = DVector::from_fn(mean.len(), |_, _| {
                        let e: f64 = StandardNormal.sample(rng);
                        e
                    });
                    let w = mean + factor * eps;
                    z[j] = input.dot(&w);
                }
                value = match layer.activation {
                    Activation::Pwl(p) => z.map(|v| (p.alpha() * v).max(p.beta() * v)),
                    Activation::Softmax => {
                        let zs: Vec<f64> = z.iter().copied().collect();
                        let mut ys = vec![0.0; zs.len()];
                        softmax_into(&zs, &mut ys);
                        DVector::from_vec(ys[..zs.len() - 1].to_vec())
                    }
                };
            }
            y_buf.clear();
            y_buf.extend(value.iter().copied());
            sums.push(&y_buf, &y_buf.clone());
        }
        sums
    });

    let (triple, errs) = triple_with_errors(n_out, n_out, blocks)?;
    Ok(McForward {
        mean: triple.mean_y().clone(),
        cov: triple.cov_y().clone(),
        se_mean: errs.mean,
    })
}

/// Plain indicator Monte Carlo for `P(X <= upper)`, `X ~ N(0, corr)`.
pub fn mc_mvn_cdf(upper: &[f64], corr: &CorrelationMatrix, mc: &McConfig) -> Result<(f64, f64)> {
    let m = upper.len();
    if corr.dim() != m {
        return Err(Error::dims("mc_mvn_cdf", m, corr.dim()));
    }
    let factor = psd_factor(corr.as_matrix());

    let counts = block_counts(mc.samples);
    let blocks: Vec<(f64, f64)> = run_blocks(mc.seed, &counts, |rng, count| {
        let mut hits = 0.0;
        let mut eps = vec![0.0; m];
        for _ in 0..count {
            for e in eps.iter_mut() {
                *e = StandardNormal.sample(rng);
            }
            let ok = (0..m).all(|i| {
                let u: f64 = (0..m).map(|k| factor[(i, k)] * eps[k]).sum();
                u <= upper[i]
            });
            if ok {
                hits += 1.0;
            }
        }
        (hits, count as f64)
    });

    let total_hits: f64 = blocks.iter().map(|(h, _)| h).sum();
    let total: f64 = blocks.iter().map(|(_, c)| c).sum();
    let means: Vec<f64> = blocks.iter().map(|(h, c)| h / c).collect();
    Ok((total_hits / total, std_err(&means)))
}

/// Indicator Monte Carlo of the Gaussian expectation of the probit
/// surrogate for class `j`: draws the surrogate variables alongside the
/// input and counts `u_tau <= lambda (z_j - z_tau)` for every other class.
/// This is the left-hand side of the closed form computed by
/// [`crate::mvn::gaussian_probit_integral`], estimated without any CDF
/// evaluation.
pub fn mc_probit_integral_lhs(
    mu_z: &DVector<f64>,
    var_z: &DVector<f64>,
    cfg: &ProbitConfig,
    j: usize,
    mc: &McConfig,
) -> Result<(f64, f64)> {
    let n = cfg.n_classes();
    if mu_z.len() != n || var_z.len() != n {
        return Err(Error::dims(
            "mc_probit_integral_lhs",
            n,
            mu_z.len().min(var_z.len()),
        ));
    }
    if j >= n {
        return Err(Error::param("j", "class index out of range"));
    }
    let lambda = cfg.lambda();
    let factor = psd_factor(cfg.rho());
    let mu: Vec<f64> = mu_z.iter().copied().collect();
    let sd: Vec<f64> = var_z.iter().map(|v| v.sqrt()).collect();
    let others: Vec<usize> = (0..n).filter(|&t| t != j).collect();

    let counts = block_counts(mc.samples);
    let blocks: Vec<(f64, f64)> = run_blocks(mc.seed, &counts, |rng, count| {
        let mut hits = 0.0;
        let mut z = vec![0.0; n];
        let mut eps = vec![0.0; n - 1];
        for _ in 0..count {
            for i in 0..n {
                let e: f64 = StandardNormal.sample(rng);
                z[i] = mu[i] + sd[i] * e;
            }
            for e in eps.iter_mut() {
                *e = StandardNormal.sample(rng);
            }
            let ok = others.iter().enumerate().all(|(pos, &tau)| {
                let u: f64 = (0..n - 1).map(|k| factor[(pos, k)] * eps[k]).sum();
                u <= lambda * (z[j] - z[tau])
            });
            if ok {
                hits += 1.0;
            }
        }
        (hits, count as f64)
    });

    let total_hits: f64 = blocks.iter().map(|(h, _)| h).sum();
    let total: f64 = blocks.iter().map(|(_, c)| c).sum();
    let means: Vec<f64> = blocks.iter().map(|(h, c)| h / c).collect();
    Ok((total_hits / total, std_err(&means)))
}

/// Sampling estimate of the expected derivative of the probit surrogate
/// with respect to the difference `z_j - z_i` (at surrogate scale 1): per
/// input draw, the derivative is the density of the pinned coordinate times
/// the conditional probability of the remaining coordinates, and that
/// conditional probability is itself estimated by one conditional draw.
pub fn mc_probit_deriv_lhs(
    mu_z: &DVector<f64>,
    var_z: &DVector<f64>,
    cfg: &ProbitConfig,
    j: usize,
    i: usize,
    mc: &McConfig,
) -> Result<(f64, f64)> {
    let n = cfg.n_classes();
    if mu_z.len() != n || var_z.len() != n {
        return Err(Error::dims(
            "mc_probit_deriv_lhs",
            n,
            mu_z.len().min(var_z.len()),
        ));
    }
    if j >= n || i >= n || i == j {
        return Err(Error::param("i", "need two distinct class indices"));
    }
    let lambda = cfg.lambda();
    let mu: Vec<f64> = mu_z.iter().copied().collect();
    let sd: Vec<f64> = var_z.iter().map(|v| v.sqrt()).collect();
    let others: Vec<usize> = (0..n).filter(|&t| t != j).collect();
    let pos_i = others.iter().position(|&t| t == i).expect("i != j");
    let m = n - 1;

    // Conditional law of the remaining surrogate coordinates given the
    // pinned one: mean rho_(k,i) * x_i, covariance the Schur complement.
    let rho = cfg.rho();
    let rest: Vec<usize> = (0..m).filter(|&k| k != pos_i).collect();
    let q = rest.len();
    let cond_factor = if q > 0 {
        let cond_cov = DMatrix::from_fn(q, q, |a, b| {
            rho[(rest[a], rest[b])] - rho[(rest[a], pos_i)] * rho[(rest[b], pos_i)]
        });
        psd_factor(&cond_cov)
    } else {
        DMatrix::zeros(0, 0)
    };

    let counts = block_counts(mc.samples);
    let blocks: Vec<(f64, f64)> = run_blocks(mc.seed, &counts, |rng, count| {
        let mut acc = 0.0;
        let mut z = vec![0.0; n];
        let mut eps = vec![0.0; q];
        for _ in 0..count {
            for t in 0..n {
                let e: f64 = StandardNormal.sample(rng);
                z[t] = mu[t] + sd[t] * e;
            }
            let x_i = lambda * (z[j] - z[i]);
            let mut value = norm_pdf(x_i);
            if q > 0 {
                for e in eps.iter_mut() {
                    *e = StandardNormal.sample(rng);
                }
                let ok = rest.iter().enumerate().all(|(a, &k)| {
                    let cond_mean = rho[(k, pos_i)] * x_i;
                    let u: f64 =
                        cond_mean + (0..q).map(|b| cond_factor[(a, b)] * eps[b]).sum::<f64>();
                    u <= lambda * (z[j] - z[others[k]])
                });
                if !ok {
                    value = 0.0;
                }
            }
            acc += value;
        }
        (acc, count as f64)
    });

    let total_acc: f64 = blocks.iter().map(|(h, _)| h).sum();
    let total: f64 = blocks.iter().map(|(_, c)| c).sum();
    let means: Vec<f64> = blocks.iter().map(|(h, c)| h / c).collect();
    Ok((total_acc / total, std_err(&means)))
}
