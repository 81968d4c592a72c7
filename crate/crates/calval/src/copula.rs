//! Gaussian copula resampling of posterior parameter samples: preserves
//! each parameter's marginal distribution and the rank correlation
//! structure while allowing arbitrarily large resamples.

use nalgebra::{Cholesky, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CalvalError, Result};
use crate::stats::{average_ranks, empirical_inv_cdf, std_normal_inv_cdf};

/// Minimum number of input samples required to fit the copula.
pub const MIN_COPULA_SAMPLES: usize = 50;

/// Shrinkage step applied repeatedly to the normal-scores correlation
/// matrix until it factorizes.
pub const SHRINKAGE_STEP: f64 = 0.01;

/// A fitted Gaussian copula over empirical marginals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianCopula {
    dim: usize,
    /// Sorted marginal samples per dimension, the empirical inverse CDFs.
    marginals: Vec<Vec<f64>>,
    /// Lower Cholesky factor of the (possibly shrunk) normal-scores
    /// correlation matrix.
    chol_l: DMatrix<f64>,
    /// Shrinkage weight that was needed to factorize, zero when the raw
    /// matrix was already positive definite.
    pub shrinkage: f64,
    /// Dimensions whose input samples were all identical; resamples
    /// reproduce the point mass.
    pub degenerate: Vec<bool>,
}

impl GaussianCopula {
    /// Fit the copula to `samples` (one row per draw).
    ///
    /// Normal scores are built from average ranks, so ties are handled;
    /// constant columns are marked degenerate and excluded from the
    /// correlation structure. If the scores correlation matrix is not
    /// positive definite it is shrunk toward the identity in steps of
    /// [`SHRINKAGE_STEP`] until it factorizes, and the weight used is
    /// recorded in `shrinkage`.
    pub fn fit(samples: &[Vec<f64>]) -> Result<GaussianCopula> {
        let n = samples.len();
        if n < MIN_COPULA_SAMPLES {
            return Err(CalvalError::TooFew {
                context: "copula input samples".into(),
                needed: MIN_COPULA_SAMPLES,
                got: n,
            });
        }
        let dim = samples[0].len();
        if dim == 0 {
            return Err(CalvalError::invalid("copula input has zero dimensions"));
        }
        for (i, row) in samples.iter().enumerate() {
            if row.len() != dim {
                return Err(CalvalError::DimensionMismatch {
                    context: format!("copula input row {i}"),
                    expected: dim,
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(CalvalError::NonFinite(format!("copula input row {i}")));
            }
        }

        let mut marginals = Vec::with_capacity(dim);
        let mut degenerate = Vec::with_capacity(dim);
        let mut scores = DMatrix::zeros(n, dim);
        for j in 0..dim {
            let col: Vec<f64> = samples.iter().map(|r| r[j]).collect();
            let mut sorted = col.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            degenerate.push(sorted[0] == sorted[n - 1]);
            let ranks = average_ranks(&col);
            for i in 0..n {
                // Rank-based plotting position keeps scores strictly inside
                // (0, 1) so the inverse CDF stays finite.
                let u = ranks[i] / (n as f64 + 1.0);
                scores[(i, j)] = std_normal_inv_cdf(u)?;
            }
            marginals.push(sorted);
        }

        let mut corr = DMatrix::identity(dim, dim);
        for a in 0..dim {
            for b in (a + 1)..dim {
                if degenerate[a] || degenerate[b] {
                    continue;
                }
                let ca = scores.column(a);
                let cb = scores.column(b);
                let ma = ca.sum() / n as f64;
                let mb = cb.sum() / n as f64;
                let mut num = 0.0;
                let mut da = 0.0;
                let mut db = 0.0;
                for i in 0..n {
                    let xa = ca[i] - ma;
                    let xb = cb[i] - mb;
                    num += xa * xb;
                    da += xa * xa;
                    db += xb * xb;
                }
                let denom = (da * db).sqrt();
                let r = if denom > 0.0 { num / denom } else { 0.0 };
                corr[(a, b)] = r;
                corr[(b, a)] = r;
            }
        }

        let mut shrinkage = 0.0;
        let chol_l = loop {
            let shrunk = if shrinkage == 0.0 {
                corr.clone()
            } else {
                let mut m = corr.clone() * (1.0 - shrinkage);
                for a in 0..dim {
                    m[(a, a)] = 1.0;
                }
                m
            };
            match Cholesky::new(shrunk) {
                Some(c) => break c.l(),
                None => {
                    shrinkage += SHRINKAGE_STEP;
                    if shrinkage >= 1.0 {
                        return Err(CalvalError::SingularCovariance(
                            "copula correlation matrix cannot be made positive definite".into(),
                        ));
                    }
                }
            }
        };
        if shrinkage > 0.0 {
            log::info!("copula correlation shrunk toward identity by {shrinkage:.2}");
        }

        Ok(GaussianCopula {
            dim,
            marginals,
            chol_l,
            shrinkage,
            degenerate,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Draw `m` resamples. Every output value lies within the range of the
    /// corresponding input marginal; degenerate dimensions reproduce their
    /// point mass exactly.
    pub fn sample(&self, m: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if m == 0 {
            return Err(CalvalError::invalid("copula resample size must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(m);
        let mut z = vec![0.0; self.dim];
        for _ in 0..m {
            for zj in z.iter_mut() {
                *zj = StandardNormal.sample(&mut rng);
            }
            let mut row = Vec::with_capacity(self.dim);
            for j in 0..self.dim {
                if self.degenerate[j] {
                    row.push(self.marginals[j][0]);
                    continue;
                }
                let corrz: f64 = z
                    .iter()
                    .take(j + 1)
                    .enumerate()
                    .map(|(k, zk)| self.chol_l[(j, k)] * zk)
                    .sum();
                let u = crate::stats::std_normal_cdf(corrz);
                row.push(empirical_inv_cdf(&self.marginals[j], u)?);
            }
            out.push(row);
        }
        Ok(out)
    }
}
