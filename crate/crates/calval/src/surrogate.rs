//! Multi-output surrogate for a computer model: one independent GP per
//! QoI over the joint (design, parameter) input space.

use crate::error::{CalvalError, Result};
use crate::gp::{FitOptions, GpModel, GpValidation};
use crate::model::{ComputerModel, DesignPoint, ParamVector, QoIVector};
use crate::stats::latin_hypercube;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// On-disk format version accepted by [`SurrogateModel::load`].
pub const SURROGATE_FORMAT_VERSION: u32 = 1;

/// Latin hypercube training design over the joint input box
/// `x_ranges x theta_ranges`, one row per training run.
pub fn build_training_design(
    x_ranges: &[(f64, f64)],
    theta_ranges: &[(f64, f64)],
    n: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let mut bounds = x_ranges.to_vec();
    bounds.extend_from_slice(theta_ranges);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = latin_hypercube(&bounds, n, &mut rng)?;
    Ok(DMatrix::from_fn(n, bounds.len(), |i, j| pts[i][j]))
}

/// Per-QoI Gaussian-process surrogate of a computer model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub format_version: u32,
    pub design_names: Vec<String>,
    pub qoi_names: Vec<String>,
    pub x_dim: usize,
    pub theta_dim: usize,
    gps: Vec<GpModel>,
}

/// Prediction for one (design, parameter) query.
#[derive(Debug, Clone)]
pub struct SurrogatePrediction {
    pub mean: QoIVector,
    /// Code-uncertainty variance per QoI.
    pub variance: Vec<f64>,
    pub extrapolating: bool,
}

impl SurrogateModel {
    /// Evaluate `model` at every row of `design` (columns ordered design
    /// dimensions first, then parameters) and fit one GP per QoI.
    ///
    /// QoI fits are independent and run in parallel; QoI `k` uses seed
    /// `base_seed + k` for its hyperparameter restarts.
    pub fn fit(
        model: &(impl ComputerModel + Sync),
        design: &DMatrix<f64>,
        base_opts: &FitOptions,
    ) -> Result<SurrogateModel> {
        let (dx, dth) = (model.design_dim(), model.param_dim());
        if design.ncols() != dx + dth {
            return Err(CalvalError::DimensionMismatch {
                context: "surrogate training design".into(),
                expected: dx + dth,
                actual: design.ncols(),
            });
        }
        let n = design.nrows();
        let mut y = DMatrix::zeros(n, model.qoi_dim());
        for i in 0..n {
            let x = DesignPoint::new(design.row(i).columns(0, dx).transpose().as_slice().to_vec());
            let th = ParamVector::new(
                design
                    .row(i)
                    .columns(dx, dth)
                    .transpose()
                    .as_slice()
                    .to_vec(),
            );
            let out = model.evaluate(&x, &th)?;
            for k in 0..model.qoi_dim() {
                y[(i, k)] = out.values[k];
            }
        }
        let gps: Vec<GpModel> = (0..model.qoi_dim())
            .into_par_iter()
            .map(|k| {
                let opts = FitOptions {
                    seed: base_opts.seed + k as u64,
                    ..base_opts.clone()
                };
                GpModel::fit(design, &DVector::from_column_slice(y.column(k).as_slice()), &opts)
            })
            .collect::<Result<_>>()?;
        Ok(SurrogateModel {
            format_version: SURROGATE_FORMAT_VERSION,
            design_names: model.design_names().iter().map(|s| s.to_string()).collect(),
            qoi_names: model.qoi_names().iter().map(|s| s.to_string()).collect(),
            x_dim: dx,
            theta_dim: dth,
            gps,
        })
    }

    pub fn qoi_dim(&self) -> usize {
        self.gps.len()
    }

    pub fn gp(&self, k: usize) -> &GpModel {
        &self.gps[k]
    }

    fn assemble_query(&self, x: &DesignPoint, theta: &ParamVector) -> Result<DMatrix<f64>> {
        if x.dim() != self.x_dim || theta.dim() != self.theta_dim {
            return Err(CalvalError::DimensionMismatch {
                context: "surrogate query".into(),
                expected: self.x_dim + self.theta_dim,
                actual: x.dim() + theta.dim(),
            });
        }
        let mut row = x.values.clone();
        row.extend_from_slice(&theta.values);
        Ok(DMatrix::from_row_slice(1, row.len(), &row))
    }

    /// Predict the QoI vector at one (design, parameter) point.
    pub fn predict(&self, x: &DesignPoint, theta: &ParamVector) -> Result<SurrogatePrediction> {
        let q = self.assemble_query(x, theta)?;
        let mut mean = Vec::with_capacity(self.qoi_dim());
        let mut variance = Vec::with_capacity(self.qoi_dim());
        let mut extrapolating = false;
        for gp in &self.gps {
            let p = gp.predict(&q)?;
            mean.push(p.mean[0]);
            variance.push(p.variance[0]);
            extrapolating |= p.extrapolating[0];
        }
        Ok(SurrogatePrediction {
            mean: QoIVector::new(mean),
            variance,
            extrapolating,
        })
    }

    /// Holdout metrics per QoI for queries given as rows of
    /// `(x, theta)` inputs with matching true responses.
    pub fn validate(
        &self,
        inputs: &DMatrix<f64>,
        truths: &DMatrix<f64>,
    ) -> Result<Vec<GpValidation>> {
        if truths.ncols() != self.qoi_dim() || truths.nrows() != inputs.nrows() {
            return Err(CalvalError::DimensionMismatch {
                context: "surrogate validation truths".into(),
                expected: self.qoi_dim(),
                actual: truths.ncols(),
            });
        }
        self.gps
            .iter()
            .enumerate()
            .map(|(k, gp)| {
                gp.validate(
                    inputs,
                    &DVector::from_column_slice(truths.column(k).as_slice()),
                )
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SurrogateModel> {
        let file = std::fs::File::open(path)?;
        let model: SurrogateModel = serde_json::from_reader(std::io::BufReader::new(file))?;
        if model.format_version != SURROGATE_FORMAT_VERSION {
            return Err(CalvalError::invalid(format!(
                "surrogate container format version {} unsupported (expected {})",
                model.format_version, SURROGATE_FORMAT_VERSION
            )));
        }
        Ok(model)
    }

    /// Precompute the design-dependent kernel blocks for a fixed set of
    /// observation designs, enabling fast repeated prediction across
    /// parameter vectors.
    pub fn prepare(&self, designs: &[DesignPoint]) -> Result<PreparedPredictor> {
        PreparedPredictor::new(self, designs)
    }
}

/// Fast predictor over a fixed list of design points.
///
/// The separable RBF kernel factorizes across the design and parameter
/// blocks, so the design-side factors against every training row can be
/// cached once; each parameter query then costs one exponential sweep over
/// the training set plus a triangular solve per QoI.
pub struct PreparedPredictor {
    per_qoi: Vec<PreparedQoi>,
    n_obs: usize,
}

struct PreparedQoi {
    /// Design-block kernel factors, training rows by observation columns,
    /// scaled by the signal variance.
    et: DMatrix<f64>,
    /// Standardized parameter block of the training inputs.
    train_theta: DMatrix<f64>,
    theta_lengths: Vec<f64>,
    theta_mean: Vec<f64>,
    theta_scale: Vec<f64>,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
    self_var: f64,
    y_mean: f64,
    y_scale: f64,
}

/// Mean and code-variance surfaces over the prepared designs for one
/// parameter vector.
pub struct PreparedPrediction {
    /// `means[i][k]`: QoI `k` at prepared design `i`.
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

/// Per-QoI ensemble moments: one means matrix and one variances matrix per
/// QoI, each of shape `(ensemble size, prepared designs)`.
pub type EnsembleMoments = (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>);

impl PreparedPredictor {
    fn new(surrogate: &SurrogateModel, designs: &[DesignPoint]) -> Result<PreparedPredictor> {
        if designs.is_empty() {
            return Err(CalvalError::TooFew {
                context: "prepared designs".into(),
                needed: 1,
                got: 0,
            });
        }
        let dx = surrogate.x_dim;
        for d in designs {
            if d.dim() != dx {
                return Err(CalvalError::DimensionMismatch {
                    context: "prepared design point".into(),
                    expected: dx,
                    actual: d.dim(),
                });
            }
        }
        let per_qoi = surrogate
            .gps
            .iter()
            .map(|gp| {
                let (x_mean, x_scale) = gp.x_normalization();
                let kern = gp.kernel();
                let train = gp.train_inputs();
                let n_train = train.nrows();
                let mut et = DMatrix::zeros(n_train, designs.len());
                for (i, d) in designs.iter().enumerate() {
                    for j in 0..n_train {
                        let mut s = 0.0;
                        for c in 0..dx {
                            let q = (d.values[c] - x_mean[c]) / x_scale[c];
                            let diff = (q - train[(j, c)]) / kern.length_scales[c];
                            s += diff * diff;
                        }
                        et[(j, i)] = kern.signal_variance * (-0.5 * s).exp();
                    }
                }
                let dth = surrogate.theta_dim;
                let train_theta = train.columns(dx, dth).into_owned();
                let (ym, ys) = gp.y_normalization();
                PreparedQoi {
                    et,
                    train_theta,
                    theta_lengths: kern.length_scales[dx..].to_vec(),
                    theta_mean: x_mean[dx..].to_vec(),
                    theta_scale: x_scale[dx..].to_vec(),
                    chol_l: gp.chol_l().clone(),
                    alpha: gp.alpha().clone(),
                    self_var: kern.signal_variance + gp.predictive_white(),
                    y_mean: ym,
                    y_scale: ys,
                }
            })
            .collect();
        Ok(PreparedPredictor {
            per_qoi,
            n_obs: designs.len(),
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn qoi_dim(&self) -> usize {
        self.per_qoi.len()
    }

    /// Predict every prepared design at one parameter vector. QoIs are
    /// computed in parallel; results are deterministic.
    pub fn predict(&self, theta: &[f64]) -> Result<PreparedPrediction> {
        let outputs: Vec<(Vec<f64>, Vec<f64>)> = self
            .per_qoi
            .par_iter()
            .map(|q| q.predict(theta, self.n_obs))
            .collect::<Result<_>>()?;
        let mut means = vec![vec![0.0; self.qoi_dim()]; self.n_obs];
        let mut variances = vec![vec![0.0; self.qoi_dim()]; self.n_obs];
        for (k, (m, v)) in outputs.into_iter().enumerate() {
            for i in 0..self.n_obs {
                means[i][k] = m[i];
                variances[i][k] = v[i];
            }
        }
        Ok(PreparedPrediction { means, variances })
    }

    /// Predict the full parameter ensemble; rows of `thetas` are parameter
    /// vectors. Returns per-QoI matrices of shape
    /// `(ensemble size, prepared designs)` for means and variances.
    pub fn predict_ensemble(&self, thetas: &DMatrix<f64>) -> Result<EnsembleMoments> {
        let m = thetas.nrows();
        let rows: Vec<PreparedPrediction> = (0..m)
            .into_par_iter()
            .map(|j| {
                let th: Vec<f64> = thetas.row(j).iter().copied().collect();
                self.predict(&th)
            })
            .collect::<Result<_>>()?;
        let mut means = vec![DMatrix::zeros(m, self.n_obs); self.qoi_dim()];
        let mut vars = vec![DMatrix::zeros(m, self.n_obs); self.qoi_dim()];
        for (j, p) in rows.iter().enumerate() {
            for i in 0..self.n_obs {
                for k in 0..self.qoi_dim() {
                    means[k][(j, i)] = p.means[i][k];
                    vars[k][(j, i)] = p.variances[i][k];
                }
            }
        }
        Ok((means, vars))
    }
}

impl PreparedQoi {
    fn predict(&self, theta: &[f64], n_obs: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let dth = self.theta_lengths.len();
        if theta.len() != dth {
            return Err(CalvalError::DimensionMismatch {
                context: "prepared predictor parameter vector".into(),
                expected: dth,
                actual: theta.len(),
            });
        }
        let n_train = self.train_theta.nrows();
        // Parameter-block kernel factor against every training row.
        let mut e = DVector::zeros(n_train);
        for j in 0..n_train {
            let mut s = 0.0;
            for (c, th) in theta.iter().enumerate() {
                let q = (th - self.theta_mean[c]) / self.theta_scale[c];
                let diff = (q - self.train_theta[(j, c)]) / self.theta_lengths[c];
                s += diff * diff;
            }
            e[j] = (-0.5 * s).exp();
        }
        // Cross-covariance columns are the cached design factors scaled by
        // the parameter factor of each training row.
        let mut kx = self.et.clone();
        for j in 0..n_train {
            let ej = e[j];
            for i in 0..n_obs {
                kx[(j, i)] *= ej;
            }
        }
        let mean_s = kx.transpose() * &self.alpha;
        let v = self
            .chol_l
            .solve_lower_triangular(&kx)
            .ok_or_else(|| CalvalError::SingularCovariance("prepared GP factor".into()))?;
        let mut means = Vec::with_capacity(n_obs);
        let mut vars = Vec::with_capacity(n_obs);
        for i in 0..n_obs {
            means.push(self.y_mean + self.y_scale * mean_s[i]);
            let vn = (self.self_var - v.column(i).norm_squared()).max(0.0);
            vars.push(vn * self.y_scale * self.y_scale);
        }
        Ok((means, vars))
    }
}
