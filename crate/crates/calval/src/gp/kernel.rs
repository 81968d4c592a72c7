//! Anisotropic squared-exponential kernel with a white-noise term.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Squared-exponential (RBF) kernel with one length scale per input
/// dimension plus a white-noise variance on the diagonal:
///
/// ```text
/// k(a, b) = signal_variance * exp(-0.5 * sum_i ((a_i - b_i) / length_scales_i)^2)
///           + white_variance * delta(a, b)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArdKernel {
    pub signal_variance: f64,
    pub length_scales: Vec<f64>,
    pub white_variance: f64,
}

impl ArdKernel {
    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    /// Latent (noise-free) kernel value between two points.
    pub fn eval_latent(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            let d = (a[i] - b[i]) / self.length_scales[i];
            s += d * d;
        }
        self.signal_variance * (-0.5 * s).exp()
    }

    /// Full covariance matrix of the rows of `x`, including the white term
    /// on the diagonal.
    pub fn cov_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = x.nrows();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval_latent(x.row(i).transpose().as_slice(), x.row(j).transpose().as_slice());
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] += self.white_variance;
        }
        k
    }

    /// Latent cross-covariance between training rows `x` and query rows
    /// `z`: an `x.nrows() x z.nrows()` matrix without any white term.
    pub fn cross_matrix(&self, x: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(x.nrows(), z.nrows());
        for i in 0..x.nrows() {
            for j in 0..z.nrows() {
                k[(i, j)] = self.eval_latent(
                    x.row(i).transpose().as_slice(),
                    z.row(j).transpose().as_slice(),
                );
            }
        }
        k
    }

    /// Pack the hyperparameters as natural logs for unconstrained
    /// optimization: `[ln signal, ln l_1 .. ln l_d, ln white]`.
    pub fn to_log_params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.dim() + 2);
        p.push(self.signal_variance.ln());
        p.extend(self.length_scales.iter().map(|l| l.ln()));
        p.push(self.white_variance.ln());
        p
    }

    /// Inverse of [`ArdKernel::to_log_params`].
    pub fn from_log_params(p: &[f64]) -> ArdKernel {
        let d = p.len() - 2;
        ArdKernel {
            signal_variance: p[0].exp(),
            length_scales: p[1..=d].iter().map(|l| l.exp()).collect(),
            white_variance: p[d + 1].exp(),
        }
    }
}

/// Column norms squared of a matrix, used for predictive variances.
pub fn column_norms_sq(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.norm_squared()))
}
