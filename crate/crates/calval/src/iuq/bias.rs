//! Model-discrepancy estimation: a per-QoI Gaussian process over the
//! design space fit to residuals between measurements and the surrogate
//! at a fixed reference parameter.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{CalvalError, Result};
use crate::gp::{FitOptions, GpModel};
use crate::model::{DesignPoint, ParamVector};
use crate::surrogate::SurrogateModel;

/// Minimum number of observations needed to estimate a discrepancy model.
pub const MIN_BIAS_OBSERVATIONS: usize = 5;

/// Default initial white-noise variance for the discrepancy fit, in
/// standardized residual units.
pub const DEFAULT_WHITE_INITIAL: f64 = 2.0;

/// Default white-noise variance bounds for the discrepancy fit.
pub const DEFAULT_WHITE_BOUNDS: (f64, f64) = (1e-6, 100.0);

/// Length-scale floor (standardized design units) for the discrepancy GP.
/// Without it the hyperparameter search can reach a basin where short
/// length scales interpolate the measurement noise at essentially the same
/// marginal likelihood as the honest white-noise solution, leaving the
/// white term at its lower bound and the discrepancy mean chasing noise.
/// The floor keeps the discrepancy smooth at the scale of the design box
/// and forces measurement noise into the white term.
pub const BIAS_LENGTH_SCALE_FLOOR: f64 = 1.0;

/// Additive model-discrepancy term. When disabled, the mean shift and its
/// variance are identically zero so the likelihood reduces to
/// measurement-plus-code uncertainty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasModel {
    enabled: bool,
    qoi_dim: usize,
    gps: Vec<GpModel>,
}

impl BiasModel {
    /// A discrepancy model that contributes nothing to the likelihood.
    pub fn disabled(qoi_dim: usize) -> BiasModel {
        BiasModel {
            enabled: false,
            qoi_dim,
            gps: Vec::new(),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn qoi_dim(&self) -> usize {
        self.qoi_dim
    }

    /// Learned white-noise variance per QoI in measurement units, or
    /// `None` when disabled. Reported for diagnostics.
    pub fn noise_variances(&self) -> Option<Vec<f64>> {
        if !self.enabled {
            return None;
        }
        Some(
            self.gps
                .iter()
                .map(|g| {
                    let (_, y_scale) = g.y_normalization();
                    g.kernel().white_variance * y_scale * y_scale
                })
                .collect(),
        )
    }

    /// Discrepancy mean and variance at one design point, per QoI.
    pub fn delta(&self, x: &DesignPoint) -> Result<(Vec<f64>, Vec<f64>)> {
        if !self.enabled {
            return Ok((vec![0.0; self.qoi_dim], vec![0.0; self.qoi_dim]));
        }
        let xq = DMatrix::from_row_slice(1, x.values.len(), &x.values);
        let mut mean = Vec::with_capacity(self.qoi_dim);
        let mut var = Vec::with_capacity(self.qoi_dim);
        for gp in &self.gps {
            let p = gp.predict(&xq)?;
            mean.push(p.mean[0]);
            var.push(p.variance[0]);
        }
        Ok((mean, var))
    }
}

/// Fit the discrepancy model from calibration data.
///
/// Residuals are measured values minus surrogate means at `theta_ref`.
/// Each QoI gets an independent GP over the design coordinates with an
/// optimized white-noise term, so the predictive variance carries both
/// the latent discrepancy and the measurement noise it was learned from.
pub fn estimate_bias(
    data: &Dataset,
    surrogate: &SurrogateModel,
    theta_ref: &ParamVector,
    seed: u64,
) -> Result<BiasModel> {
    estimate_bias_with(
        data,
        surrogate,
        theta_ref,
        seed,
        DEFAULT_WHITE_INITIAL,
        DEFAULT_WHITE_BOUNDS,
    )
}

/// [`estimate_bias`] with explicit white-noise settings.
pub fn estimate_bias_with(
    data: &Dataset,
    surrogate: &SurrogateModel,
    theta_ref: &ParamVector,
    seed: u64,
    white_initial: f64,
    white_bounds: (f64, f64),
) -> Result<BiasModel> {
    let n = data.len();
    if n < MIN_BIAS_OBSERVATIONS {
        return Err(CalvalError::TooFew {
            context: "discrepancy estimation observations".into(),
            needed: MIN_BIAS_OBSERVATIONS,
            got: n,
        });
    }
    let qoi_dim = data.qoi_dim();
    if qoi_dim != surrogate.qoi_dim() {
        return Err(CalvalError::DimensionMismatch {
            context: "discrepancy dataset QoIs".into(),
            expected: surrogate.qoi_dim(),
            actual: qoi_dim,
        });
    }
    let x_dim = data.design_names.len();
    let mut x = DMatrix::zeros(n, x_dim);
    let mut residuals = DMatrix::zeros(n, qoi_dim);
    for (i, obs) in data.observations.iter().enumerate() {
        let pred = surrogate.predict(&obs.design, theta_ref)?;
        for j in 0..x_dim {
            x[(i, j)] = obs.design.values[j];
        }
        for k in 0..qoi_dim {
            residuals[(i, k)] = obs.measured.values[k] - pred.mean.values[k];
        }
    }

    let gps: Result<Vec<GpModel>> = (0..qoi_dim)
        .into_par_iter()
        .map(|k| {
            let y: DVector<f64> = residuals.column(k).into_owned();
            let mut opts = FitOptions::noisy(seed + k as u64, white_initial, white_bounds);
            opts.length_scale_bounds = (BIAS_LENGTH_SCALE_FLOOR, opts.length_scale_bounds.1);
            GpModel::fit(&x, &y, &opts)
        })
        .collect();

    Ok(BiasModel {
        enabled: true,
        qoi_dim,
        gps: gps?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DomainTag;
    use crate::model::generator::{generate_dataset, GeneratorSettings};
    use crate::model::BenchmarkModel;
    use crate::surrogate::{build_training_design, SurrogateModel};

    const X_RANGES: [(f64, f64); 4] = [(7.0, 7.3), (12.0, 18.0), (6.0, 7.0), (282.0, 285.5)];
    const THETA_RANGES: [(f64, f64); 5] = [
        (0.8, 1.2),
        (0.8, 1.2),
        (0.8, 1.2),
        (0.8, 1.2),
        (0.8, 1.2),
    ];

    fn smooth_surrogate() -> SurrogateModel {
        let model = BenchmarkModel::new();
        let design = build_training_design(&X_RANGES, &THETA_RANGES, 110, 6000).unwrap();
        SurrogateModel::fit(&model, &design, &FitOptions::interpolating(2024)).unwrap()
    }

    #[test]
    fn disabled_model_contributes_nothing() {
        let bias = BiasModel::disabled(4);
        let x = DesignPoint::new(vec![7.1, 15.0, 6.5, 283.0]);
        let (delta, var) = bias.delta(&x).unwrap();
        assert_eq!(delta, vec![0.0; 4]);
        assert_eq!(var, vec![0.0; 4]);
        assert!(bias.noise_variances().is_none());
    }

    #[test]
    fn too_few_observations_is_an_error() {
        let model = BenchmarkModel::new();
        let surrogate = smooth_surrogate();
        let settings = GeneratorSettings::unbiased(model.theta_star(), 1.5);
        let data = generate_dataset(
            &model,
            &settings,
            &X_RANGES,
            4,
            "B",
            DomainTag::Iuq,
            7,
        )
        .unwrap();
        let err = estimate_bias(&data, &surrogate, &model.theta_star(), 1).unwrap_err();
        assert!(matches!(err, CalvalError::TooFew { .. }), "got {err}");
    }

    #[test]
    fn recovers_injected_discrepancy_within_noise() {
        let model = BenchmarkModel::new();
        let surrogate = smooth_surrogate();
        let noise_sd = 1.5;
        let settings = GeneratorSettings::biased(model.theta_star(), noise_sd);
        let data = generate_dataset(
            &model,
            &settings,
            &X_RANGES,
            40,
            "B",
            DomainTag::Iuq,
            11,
        )
        .unwrap();
        let bias = estimate_bias(&data, &surrogate, &model.theta_star(), 5).unwrap();

        // At the residual design points the posterior-mean discrepancy must
        // land within a few noise standard deviations of the injected truth.
        let mut worst: f64 = 0.0;
        for obs in &data.observations {
            let truth = model.injected_bias(&obs.design).unwrap();
            let (delta, var) = bias.delta(&obs.design).unwrap();
            for k in 0..4 {
                worst = worst.max((delta[k] - truth.values[k]).abs());
                assert!(var[k] > 0.0, "discrepancy variance must be positive");
            }
        }
        assert!(
            worst < 3.0 * noise_sd,
            "worst discrepancy error {worst:.3} exceeds 3 sigma"
        );

        let noise = bias.noise_variances().unwrap();
        for v in noise {
            assert!(
                v > 0.3 * noise_sd * noise_sd && v < 4.0 * noise_sd * noise_sd,
                "learned noise variance {v:.3} far from injected {}",
                noise_sd * noise_sd
            );
        }
    }
}
