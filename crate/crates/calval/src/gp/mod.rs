//! Single-output Gaussian-process regression with an anisotropic
//! squared-exponential kernel, marginal-likelihood hyperparameter
//! selection, and JSON persistence.
//!
//! Inputs are standardized per dimension and targets are standardized to
//! zero mean and unit variance before fitting, so hyperparameter bounds are
//! expressed in normalized units.

pub mod kernel;
pub mod optimizer;

use crate::error::{CalvalError, Result};
use kernel::{column_norms_sq, ArdKernel};
use nalgebra::{Cholesky, DMatrix, DVector};
use optimizer::{log_marginal_likelihood, nelder_mead};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// On-disk format version accepted by [`GpModel::load`].
pub const GP_FORMAT_VERSION: u32 = 1;

/// How the white-noise variance is treated during fitting (all values are
/// relative to the standardized target variance of 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WhiteSpec {
    /// Fixed numerical jitter. Excluded from the hyperparameter search and
    /// from predictive variances; escalated tenfold on factorization
    /// failure up to `max`.
    Jitter { initial: f64, max: f64 },
    /// Free noise variance optimized within `bounds` and included in
    /// predictive variances.
    Optimized { initial: f64, bounds: (f64, f64) },
}

/// Hyperparameter search settings.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Additional randomized restarts beyond the default start.
    pub restarts: usize,
    /// Nelder-Mead iteration cap per start.
    pub max_iters: usize,
    /// Seed for the restart draws.
    pub seed: u64,
    /// Signal-variance search bounds (standardized units).
    pub signal_bounds: (f64, f64),
    /// Length-scale search bounds (standardized units).
    pub length_scale_bounds: (f64, f64),
    pub white: WhiteSpec,
}

impl FitOptions {
    /// Defaults for an interpolating surrogate of a deterministic code.
    pub fn interpolating(seed: u64) -> Self {
        FitOptions {
            restarts: 8,
            max_iters: 300,
            seed,
            signal_bounds: (1e-3, 1e3),
            length_scale_bounds: (1e-2, 1e2),
            white: WhiteSpec::Jitter {
                initial: 1e-10,
                max: 1e-2,
            },
        }
    }

    /// Defaults for regression on noisy residuals where the white term
    /// carries the noise budget.
    pub fn noisy(seed: u64, white_initial: f64, white_bounds: (f64, f64)) -> Self {
        FitOptions {
            restarts: 8,
            max_iters: 300,
            seed,
            signal_bounds: (1e-3, 1e3),
            length_scale_bounds: (1e-2, 1e2),
            white: WhiteSpec::Optimized {
                initial: white_initial,
                bounds: white_bounds,
            },
        }
    }
}

/// Diagnostics recorded while fitting.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitLog {
    /// Number of tenfold jitter escalations needed to factorize the final
    /// covariance.
    pub nugget_escalations: u32,
    /// Negative log marginal likelihood at the selected hyperparameters
    /// (standardized units).
    pub best_nlml: f64,
    /// Restart index (0 = default start) that produced the winner.
    pub best_start: usize,
}

/// Batch prediction output.
#[derive(Debug, Clone)]
pub struct GpPrediction {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    /// Per-point flag: the query leaves the training hull in at least one
    /// dimension.
    pub extrapolating: Vec<bool>,
}

/// Holdout metrics from [`GpModel::validate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpValidation {
    pub rmse: f64,
    /// Fraction of holdout points whose truth falls inside the central 95%
    /// predictive interval.
    pub coverage_fraction: f64,
}

/// A fitted Gaussian-process model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpModel {
    pub format_version: u32,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    x_min: Vec<f64>,
    x_max: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    kernel: ArdKernel,
    /// Whether the kernel's white variance contributes to predictive
    /// variances (true for regression, false for interpolation jitter).
    white_in_prediction: bool,
    train_x: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
    pub fit_log: FitLog,
}

fn standardize_columns(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut scales = Vec::with_capacity(x.ncols());
    let mut xs = x.clone();
    for j in 0..x.ncols() {
        let col = x.column(j);
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0).max(1.0);
        let s = if var.sqrt() > 1e-300 { var.sqrt() } else { 1.0 };
        means.push(m);
        scales.push(s);
        for i in 0..x.nrows() {
            xs[(i, j)] = (x[(i, j)] - m) / s;
        }
    }
    (means, scales, xs)
}

impl GpModel {
    /// Fit a GP to rows of `x` and targets `y` by maximizing the log
    /// marginal likelihood over a default start plus randomized restarts.
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, opts: &FitOptions) -> Result<GpModel> {
        let n = x.nrows();
        if n < 2 {
            return Err(CalvalError::TooFew {
                context: "GP training set".into(),
                needed: 2,
                got: n,
            });
        }
        if y.len() != n {
            return Err(CalvalError::DimensionMismatch {
                context: "GP targets".into(),
                expected: n,
                actual: y.len(),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(CalvalError::NonFinite("GP training data".into()));
        }
        let d = x.ncols();

        let (x_mean, x_scale, xs) = standardize_columns(x);
        let x_min: Vec<f64> = (0..d).map(|j| x.column(j).min()).collect();
        let x_max: Vec<f64> = (0..d).map(|j| x.column(j).max()).collect();
        let ym = y.sum() / n as f64;
        let yvar = y.iter().map(|v| (v - ym) * (v - ym)).sum::<f64>() / (n as f64 - 1.0);
        let ys_scale = if yvar.sqrt() > 1e-300 { yvar.sqrt() } else { 1.0 };
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - ym) / ys_scale));

        // Pack hyperparameters in log space; the white term joins the
        // search only when it is a free noise variance.
        let optimize_white = matches!(opts.white, WhiteSpec::Optimized { .. });
        let (white_init, white_bounds) = match opts.white {
            WhiteSpec::Jitter { initial, max } => (initial, (initial.clamp(1e-300, 1e-12), max)),
            WhiteSpec::Optimized { initial, bounds } => (initial, bounds),
        };
        let mut log_bounds: Vec<(f64, f64)> = Vec::with_capacity(d + 2);
        log_bounds.push((opts.signal_bounds.0.ln(), opts.signal_bounds.1.ln()));
        for _ in 0..d {
            log_bounds.push((
                opts.length_scale_bounds.0.ln(),
                opts.length_scale_bounds.1.ln(),
            ));
        }
        if optimize_white {
            log_bounds.push((white_bounds.0.ln(), white_bounds.1.ln()));
        }

        let unpack = |p: &[f64]| -> ArdKernel {
            ArdKernel {
                signal_variance: p[0].exp(),
                length_scales: p[1..=d].iter().map(|v| v.exp()).collect(),
                white_variance: if optimize_white {
                    p[d + 1].exp()
                } else {
                    white_init.max(1e-300)
                },
            }
        };
        let objective = |p: &[f64]| -> f64 {
            match log_marginal_likelihood(&unpack(p), &xs, &ys) {
                Some(lml) if lml.is_finite() => -lml,
                _ => f64::INFINITY,
            }
        };

        let mut default_start = vec![0.0; 1 + d];
        if optimize_white {
            default_start.push(white_init.ln());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut best: Option<(Vec<f64>, f64, usize)> = None;
        for start_idx in 0..=opts.restarts {
            let start = if start_idx == 0 {
                default_start.clone()
            } else {
                log_bounds
                    .iter()
                    .map(|(lo, hi)| rng.random_range(*lo..*hi))
                    .collect()
            };
            let r = nelder_mead(objective, &start, &log_bounds, 0.5, opts.max_iters, 1e-9);
            if r.f.is_finite() && best.as_ref().map_or(true, |(_, bf, _)| r.f < *bf) {
                best = Some((r.x, r.f, start_idx));
            }
        }
        let (best_p, best_nlml, best_start) = best.ok_or_else(|| {
            CalvalError::GpFit(
                "no hyperparameter start produced a factorizable covariance".into(),
            )
        })?;
        let mut kern = unpack(&best_p);

        // Factorize at the winning hyperparameters, escalating the white
        // term tenfold on failure up to the configured ceiling.
        let escalation_max = match opts.white {
            WhiteSpec::Jitter { max, .. } => max,
            WhiteSpec::Optimized { bounds, .. } => bounds.1,
        };
        let mut escalations = 0u32;
        let chol: Cholesky<f64, nalgebra::Dyn> = loop {
            let k = kern.cov_matrix(&xs);
            // A pivot collapsing toward zero means the factor is unusable
            // even when the decomposition formally succeeds.
            let pivot_floor = 1e-8 * k.diagonal().max().sqrt();
            match Cholesky::new(k) {
                Some(c) if c.l_dirty().diagonal().min() > pivot_floor => break c,
                _ => {
                    let next = (kern.white_variance.max(1e-12)) * 10.0;
                    if next > escalation_max {
                        return Err(CalvalError::GpFit(format!(
                            "covariance still not positive definite after escalating the nugget to {next:.3e} (ceiling {escalation_max:.3e})"
                        )));
                    }
                    log::warn!(
                        "GP covariance factorization failed; escalating nugget {:.3e} -> {:.3e}",
                        kern.white_variance,
                        next
                    );
                    kern.white_variance = next;
                    escalations += 1;
                }
            }
        };
        let alpha = chol.solve(&ys);
        let chol_l = chol.l();

        Ok(GpModel {
            format_version: GP_FORMAT_VERSION,
            x_mean,
            x_scale,
            x_min,
            x_max,
            y_mean: ym,
            y_scale: ys_scale,
            kernel: kern,
            white_in_prediction: optimize_white,
            train_x: xs,
            chol_l,
            alpha,
            fit_log: FitLog {
                nugget_escalations: escalations,
                best_nlml,
                best_start,
            },
        })
    }

    pub fn input_dim(&self) -> usize {
        self.x_mean.len()
    }

    pub fn train_size(&self) -> usize {
        self.train_x.nrows()
    }

    /// Kernel selected by the fit (standardized units).
    pub fn kernel(&self) -> &ArdKernel {
        &self.kernel
    }

    /// Target standardization constants `(mean, scale)`.
    pub fn y_normalization(&self) -> (f64, f64) {
        (self.y_mean, self.y_scale)
    }

    /// Input standardization constants.
    pub fn x_normalization(&self) -> (&[f64], &[f64]) {
        (&self.x_mean, &self.x_scale)
    }

    /// Standardized training inputs.
    pub fn train_inputs(&self) -> &DMatrix<f64> {
        &self.train_x
    }

    /// Lower Cholesky factor of the training covariance.
    pub fn chol_l(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    /// Weights `K^{-1} y` in standardized units.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// White variance added to predictive variances (standardized units);
    /// zero for interpolating fits.
    pub fn predictive_white(&self) -> f64 {
        if self.white_in_prediction {
            self.kernel.white_variance
        } else {
            0.0
        }
    }

    fn standardize_queries(&self, xq: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if xq.ncols() != self.input_dim() {
            return Err(CalvalError::DimensionMismatch {
                context: "GP query".into(),
                expected: self.input_dim(),
                actual: xq.ncols(),
            });
        }
        if xq.iter().any(|v| !v.is_finite()) {
            return Err(CalvalError::NonFinite("GP query".into()));
        }
        let mut q = xq.clone();
        for j in 0..q.ncols() {
            for i in 0..q.nrows() {
                q[(i, j)] = (xq[(i, j)] - self.x_mean[j]) / self.x_scale[j];
            }
        }
        Ok(q)
    }

    /// Predict at the rows of `xq`. A single point is the one-row batch;
    /// batched and repeated single calls agree bitwise.
    pub fn predict(&self, xq: &DMatrix<f64>) -> Result<GpPrediction> {
        let q = self.standardize_queries(xq)?;
        let kx = self.kernel.cross_matrix(&self.train_x, &q);
        let v = self
            .chol_l
            .solve_lower_triangular(&kx)
            .ok_or_else(|| CalvalError::SingularCovariance("stored GP factor".into()))?;
        let mean_s = kx.transpose() * &self.alpha;
        let self_var = self.kernel.signal_variance + self.predictive_white();
        let norms = column_norms_sq(&v);
        let mut mean = DVector::zeros(q.nrows());
        let mut variance = DVector::zeros(q.nrows());
        for i in 0..q.nrows() {
            mean[i] = self.y_mean + self.y_scale * mean_s[i];
            variance[i] = (self_var - norms[i]).max(0.0) * self.y_scale * self.y_scale;
        }
        let extrapolating: Vec<bool> = (0..xq.nrows())
            .map(|i| {
                (0..xq.ncols()).any(|j| {
                    xq[(i, j)] < self.x_min[j] - 1e-12 || xq[(i, j)] > self.x_max[j] + 1e-12
                })
            })
            .collect();
        if extrapolating.iter().any(|&e| e) {
            log::debug!(
                "GP prediction batch contains {} extrapolating point(s)",
                extrapolating.iter().filter(|&&e| e).count()
            );
        }
        Ok(GpPrediction {
            mean,
            variance,
            extrapolating,
        })
    }

    /// Root-mean-square error and 95% coverage on a holdout set.
    pub fn validate(&self, xq: &DMatrix<f64>, y_true: &DVector<f64>) -> Result<GpValidation> {
        if xq.nrows() != y_true.len() || xq.nrows() == 0 {
            return Err(CalvalError::DimensionMismatch {
                context: "GP validation set".into(),
                expected: xq.nrows().max(1),
                actual: y_true.len(),
            });
        }
        let p = self.predict(xq)?;
        let mut sse = 0.0;
        let mut covered = 0usize;
        for i in 0..y_true.len() {
            let err = y_true[i] - p.mean[i];
            sse += err * err;
            if err.abs() <= 1.96 * p.variance[i].sqrt() {
                covered += 1;
            }
        }
        Ok(GpValidation {
            rmse: (sse / y_true.len() as f64).sqrt(),
            coverage_fraction: covered as f64 / y_true.len() as f64,
        })
    }

    /// Serialize to a self-describing JSON file.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    /// Load a model written by [`GpModel::save`], verifying the format
    /// version.
    pub fn load(path: &Path) -> Result<GpModel> {
        let file = std::fs::File::open(path)?;
        let model: GpModel = serde_json::from_reader(std::io::BufReader::new(file))?;
        if model.format_version != GP_FORMAT_VERSION {
            return Err(CalvalError::invalid(format!(
                "GP container format version {} unsupported (expected {})",
                model.format_version, GP_FORMAT_VERSION
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear_data(n: usize) -> (DMatrix<f64>, DVector<f64>) {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|u| 3.0 * u + 1.0).collect();
        (
            DMatrix::from_iterator(n, 1, xs),
            DVector::from_vec(ys),
        )
    }

    #[test]
    fn recovers_linear_function() {
        let (x, y) = linear_data(20);
        let gp = GpModel::fit(&x, &y, &FitOptions::interpolating(1)).unwrap();
        let q = DMatrix::from_row_slice(5, 1, &[0.05, 0.33, 0.5, 0.71, 0.95]);
        let p = gp.predict(&q).unwrap();
        for (i, u) in [0.05, 0.33, 0.5, 0.71, 0.95].iter().enumerate() {
            let truth = 3.0 * u + 1.0;
            assert!(
                (p.mean[i] - truth).abs() / truth.abs() < 1e-3,
                "poor interpolation at {u}: {} vs {truth}",
                p.mean[i]
            );
        }
    }

    #[test]
    fn reproduces_training_points_with_small_variance() {
        let (x, y) = linear_data(15);
        let gp = GpModel::fit(&x, &y, &FitOptions::interpolating(2)).unwrap();
        let p = gp.predict(&x).unwrap();
        let nugget_scale =
            (gp.kernel().white_variance.max(1e-10) * gp.kernel().signal_variance).sqrt()
                * gp.y_normalization().1;
        for i in 0..x.nrows() {
            let rel = (p.mean[i] - y[i]).abs() / y[i].abs();
            assert!(rel < 1e-6, "training point {i} off by {rel:.2e}");
            assert!(
                (p.mean[i] - y[i]).abs() <= 10.0 * nugget_scale.max(1e-8),
                "interpolation defect at {i}"
            );
            assert!(p.variance[i] * gp.y_normalization().1.powi(-2) < 1e-4);
        }
    }

    #[test]
    fn constant_targets_give_constant_mean_and_tiny_variance() {
        let x = DMatrix::from_row_slice(10, 1, &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
        let y = DVector::from_element(10, 7.25);
        let gp = GpModel::fit(&x, &y, &FitOptions::interpolating(3)).unwrap();
        let p = gp
            .predict(&DMatrix::from_row_slice(3, 1, &[0.05, 0.55, 0.85]))
            .unwrap();
        for i in 0..3 {
            assert_relative_eq!(p.mean[i], 7.25, epsilon = 1e-8);
            assert!(p.variance[i] < 1e-8);
        }
    }

    #[test]
    fn flags_extrapolation() {
        let (x, y) = linear_data(10);
        let gp = GpModel::fit(&x, &y, &FitOptions::interpolating(4)).unwrap();
        let p = gp
            .predict(&DMatrix::from_row_slice(2, 1, &[0.5, 1.5]))
            .unwrap();
        assert!(!p.extrapolating[0]);
        assert!(p.extrapolating[1]);
    }

    #[test]
    fn batch_equals_single_calls_bitwise() {
        let (x, y) = linear_data(12);
        let gp = GpModel::fit(&x, &y, &FitOptions::interpolating(5)).unwrap();
        let queries = [0.11, 0.47, 0.83];
        let batch = gp
            .predict(&DMatrix::from_row_slice(3, 1, &queries))
            .unwrap();
        for (i, q) in queries.iter().enumerate() {
            let single = gp.predict(&DMatrix::from_row_slice(1, 1, &[*q])).unwrap();
            assert_eq!(single.mean[0].to_bits(), batch.mean[i].to_bits());
            assert_eq!(single.variance[0].to_bits(), batch.variance[i].to_bits());
        }
    }

    #[test]
    fn save_load_round_trip_is_bit_identical() {
        let (x, y) = linear_data(12);
        let gp = GpModel::fit(&x, &y, &FitOptions::interpolating(6)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gp.json");
        gp.save(&path).unwrap();
        let loaded = GpModel::load(&path).unwrap();
        let q = DMatrix::from_row_slice(4, 1, &[0.2, 0.4, 0.6, 0.8]);
        let a = gp.predict(&q).unwrap();
        let b = loaded.predict(&q).unwrap();
        for i in 0..4 {
            assert_eq!(a.mean[i].to_bits(), b.mean[i].to_bits());
            assert_eq!(a.variance[i].to_bits(), b.variance[i].to_bits());
        }
    }

    #[test]
    fn rejects_future_format_versions() {
        let (x, y) = linear_data(8);
        let gp = GpModel::fit(&x, &y, &FitOptions::interpolating(7)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gp.json");
        gp.save(&path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replacen("\"format_version\":1", "\"format_version\":99", 1);
        std::fs::write(&path, text).unwrap();
        assert!(GpModel::load(&path).is_err());
    }

    #[test]
    fn escalates_nugget_on_degenerate_training_sets() {
        // Duplicated rows with a zero initial jitter cannot factorize; the
        // fit must escalate instead of failing outright.
        let x = DMatrix::from_row_slice(6, 1, &[0.5, 0.5, 0.5, 0.9, 0.9, 0.9]);
        let y = DVector::from_row_slice(&[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let opts = FitOptions {
            white: WhiteSpec::Jitter {
                initial: 0.0,
                max: 1e-2,
            },
            ..FitOptions::interpolating(8)
        };
        let gp = GpModel::fit(&x, &y, &opts).unwrap();
        assert!(gp.fit_log.nugget_escalations >= 1);
    }

    #[test]
    fn standardization_round_trip() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 100.0, 2.0, 200.0, 3.0, 300.0, 4.0, 400.0]);
        let (m, s, xs) = standardize_columns(&x);
        for i in 0..4 {
            for j in 0..2 {
                let back = xs[(i, j)] * s[j] + m[j];
                assert_relative_eq!(back, x[(i, j)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn noisy_fit_carries_noise_into_predictive_variance() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let noise_sd = 0.3;
        let gauss = Normal::new(0.0, noise_sd).unwrap();
        let n = 60;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64 * 6.0).collect();
        let ys: Vec<f64> = xs.iter().map(|u| u.sin() + gauss.sample(&mut rng)).collect();
        let x = DMatrix::from_iterator(n, 1, xs.iter().copied());
        let y = DVector::from_vec(ys);
        let gp = GpModel::fit(&x, &y, &FitOptions::noisy(13, 1.0, (1e-6, 100.0))).unwrap();
        let p = gp
            .predict(&DMatrix::from_row_slice(3, 1, &[1.0, 3.0, 5.0]))
            .unwrap();
        let noise_var = noise_sd * noise_sd;
        for i in 0..3 {
            assert!(
                p.variance[i] > 0.3 * noise_var && p.variance[i] < 3.0 * noise_var,
                "predictive variance {} not on the noise scale {noise_var}",
                p.variance[i]
            );
        }
    }
}
