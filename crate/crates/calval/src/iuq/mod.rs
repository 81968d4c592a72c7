//! Bayesian inverse uncertainty quantification: the measurement-model
//! likelihood, model-discrepancy estimation, and posterior sampling.

pub mod bias;
pub mod mcmc;

use crate::data::Dataset;
use crate::error::{CalvalError, Result};
use crate::model::{DesignPoint, ParamVector, PriorSpec};
use crate::stats::normal_logpdf;
use crate::surrogate::{PreparedPredictor, SurrogateModel};
use bias::BiasModel;

/// Per-observation uncertainty budget: experimental, model-discrepancy,
/// and code (surrogate) variance per QoI. All components are diagonal in
/// QoI space.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyBudget {
    pub experimental: Vec<f64>,
    pub bias: Vec<f64>,
    pub code: Vec<f64>,
}

impl UncertaintyBudget {
    pub fn total(&self) -> Vec<f64> {
        self.experimental
            .iter()
            .zip(&self.bias)
            .zip(&self.code)
            .map(|((e, b), c)| e + b + c)
            .collect()
    }

    fn check(&self) -> Result<()> {
        let d = self.experimental.len();
        if self.bias.len() != d || self.code.len() != d {
            return Err(CalvalError::DimensionMismatch {
                context: "uncertainty budget".into(),
                expected: d,
                actual: self.bias.len().max(self.code.len()),
            });
        }
        for (name, comp) in [
            ("experimental", &self.experimental),
            ("bias", &self.bias),
            ("code", &self.code),
        ] {
            if comp.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(CalvalError::SingularCovariance(format!(
                    "{name} variance component"
                )));
            }
        }
        Ok(())
    }
}

/// Gaussian log likelihood of one observation's residual vector under a
/// diagonal uncertainty budget.
///
/// Each QoI contributes `log N(residual_k; 0, total_k)` with
/// `total_k = experimental_k + bias_k + code_k`.
pub fn gaussian_log_likelihood(residual: &[f64], budget: &UncertaintyBudget) -> Result<f64> {
    budget.check()?;
    if residual.len() != budget.experimental.len() {
        return Err(CalvalError::DimensionMismatch {
            context: "likelihood residual".into(),
            expected: budget.experimental.len(),
            actual: residual.len(),
        });
    }
    let total = budget.total();
    let mut acc = 0.0;
    for (r, v) in residual.iter().zip(&total) {
        if *v <= 0.0 {
            return Err(CalvalError::SingularCovariance(
                "total observation variance is zero; every budget component vanished".into(),
            ));
        }
        acc += normal_logpdf(*r, *v)?;
    }
    Ok(acc)
}

/// Precomputed likelihood state for one calibration dataset: surrogate
/// kernel caches for the fixed observation designs plus frozen bias-model
/// contributions.
pub struct LikelihoodContext {
    prep: PreparedPredictor,
    measured: Vec<Vec<f64>>,
    meas_var: Vec<Vec<f64>>,
    bias_delta: Vec<Vec<f64>>,
    bias_var: Vec<Vec<f64>>,
    n_obs: usize,
    qoi_dim: usize,
}

impl LikelihoodContext {
    /// Build the context. The bias model's mean shift and variance are
    /// evaluated once per observation here; the parameter-dependent
    /// surrogate part is recomputed per likelihood call.
    pub fn new(
        data: &Dataset,
        surrogate: &SurrogateModel,
        bias_model: &BiasModel,
    ) -> Result<LikelihoodContext> {
        if data.is_empty() {
            return Err(CalvalError::Dataset(
                "cannot build a likelihood over an empty dataset".into(),
            ));
        }
        if data.qoi_dim() != surrogate.qoi_dim() {
            return Err(CalvalError::DimensionMismatch {
                context: "likelihood dataset QoIs".into(),
                expected: surrogate.qoi_dim(),
                actual: data.qoi_dim(),
            });
        }
        let designs: Vec<DesignPoint> =
            data.observations.iter().map(|o| o.design.clone()).collect();
        let prep = surrogate.prepare(&designs)?;
        let mut bias_delta = Vec::with_capacity(designs.len());
        let mut bias_var = Vec::with_capacity(designs.len());
        for d in &designs {
            let (delta, var) = bias_model.delta(d)?;
            bias_delta.push(delta);
            bias_var.push(var);
        }
        Ok(LikelihoodContext {
            prep,
            measured: data
                .observations
                .iter()
                .map(|o| o.measured.values.clone())
                .collect(),
            meas_var: data
                .observations
                .iter()
                .map(|o| o.measurement_variance.clone())
                .collect(),
            bias_delta,
            bias_var,
            n_obs: data.len(),
            qoi_dim: data.qoi_dim(),
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Log likelihood of the dataset at `theta`: independent Gaussian
    /// residuals per observation and QoI with variance
    /// `measurement + bias + code`.
    pub fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        let pred = self.prep.predict(theta)?;
        let mut acc = 0.0;
        for i in 0..self.n_obs {
            for k in 0..self.qoi_dim {
                let resid = self.measured[i][k] - pred.means[i][k] - self.bias_delta[i][k];
                let var = self.meas_var[i][k] + self.bias_var[i][k] + pred.variances[i][k];
                if var <= 0.0 {
                    return Err(CalvalError::SingularCovariance(format!(
                        "observation {i}, QoI {k}: all variance components are zero"
                    )));
                }
                acc += normal_logpdf(resid, var)?;
            }
        }
        Ok(acc)
    }

    /// Uncertainty budget for observation `i` at `theta`.
    pub fn budget_at(&self, i: usize, theta: &[f64]) -> Result<UncertaintyBudget> {
        if i >= self.n_obs {
            return Err(CalvalError::invalid(format!(
                "observation index {i} out of range ({} observations)",
                self.n_obs
            )));
        }
        let pred = self.prep.predict(theta)?;
        Ok(UncertaintyBudget {
            experimental: self.meas_var[i].clone(),
            bias: self.bias_var[i].clone(),
            code: pred.variances[i].clone(),
        })
    }
}

/// One-call convenience wrapper over [`LikelihoodContext`].
pub fn log_likelihood(
    theta: &ParamVector,
    data: &Dataset,
    surrogate: &SurrogateModel,
    bias_model: &BiasModel,
) -> Result<f64> {
    LikelihoodContext::new(data, surrogate, bias_model)?.log_likelihood(&theta.values)
}

/// Log posterior kernel under a uniform box prior: the log likelihood
/// inside the box, negative infinity outside. The flat prior constant is
/// omitted.
pub fn log_posterior(
    prior: &PriorSpec,
    ctx: &LikelihoodContext,
    theta: &[f64],
) -> Result<f64> {
    if !prior.contains(theta) {
        return Ok(f64::NEG_INFINITY);
    }
    ctx.log_likelihood(theta)
}

/// Distance from `point` to `target` in prior-width units: the Euclidean
/// norm of the coordinate differences each divided by its prior width.
/// Quantifies how far a posterior mean sits from a reference point on a
/// scale where 1.0 spans the whole prior box.
pub fn normalized_distance(point: &[f64], target: &[f64], prior: &PriorSpec) -> Result<f64> {
    if point.len() != prior.dim() || target.len() != prior.dim() {
        return Err(CalvalError::DimensionMismatch {
            context: "normalized distance".into(),
            expected: prior.dim(),
            actual: point.len().min(target.len()),
        });
    }
    let widths = prior.widths();
    let mut s = 0.0;
    for i in 0..point.len() {
        let d = (point[i] - target[i]) / widths[i];
        s += d * d;
    }
    Ok(s.sqrt())
}
