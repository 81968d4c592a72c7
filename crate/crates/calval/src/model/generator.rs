//! Synthetic-experiment generator.
//!
//! Builds measurement datasets from a computer model evaluated at its
//! data-generating parameters, optionally adding a structural model
//! discrepancy and an instrument distortion, then corrupting the result
//! with homoscedastic Gaussian noise.

use crate::data::{Dataset, DomainTag, Observation};
use crate::error::{CalvalError, Result};
use crate::model::correction::{distort_void_fraction, CorrectionFamily};
use crate::model::{BenchmarkModel, ComputerModel, DesignPoint, ParamVector, QoIVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Settings controlling how synthetic measurements are produced.
#[derive(Debug, Clone)]
pub struct GeneratorSettings {
    /// Parameter values the "experiments" are generated at.
    pub theta_star: ParamVector,
    /// Measurement noise standard deviation, in QoI units.
    pub noise_sd: f64,
    /// Add the benchmark's structural discrepancy on top of the model
    /// response before measuring.
    pub inject_bias: bool,
    /// When set, report readings as an uncorrected instrument of this
    /// calibration family would: the true response is pushed through the
    /// inverse of the correction map so that downstream ingest has a real
    /// correction to perform.
    pub distortion: Option<CorrectionFamily>,
}

impl GeneratorSettings {
    /// Measurements of the bare model response plus noise.
    pub fn unbiased(theta_star: ParamVector, noise_sd: f64) -> Self {
        GeneratorSettings {
            theta_star,
            noise_sd,
            inject_bias: false,
            distortion: None,
        }
    }

    /// Measurements with the structural discrepancy included.
    pub fn biased(theta_star: ParamVector, noise_sd: f64) -> Self {
        GeneratorSettings {
            theta_star,
            noise_sd,
            inject_bias: true,
            distortion: None,
        }
    }
}

/// Generate `n` synthetic observations of the benchmark model over uniform
/// random design points inside `ranges`.
///
/// Test ids are `{prefix}{001..}`; every observation carries the same
/// measurement variance `noise_sd^2` per QoI. The draw is fully determined
/// by `seed`.
pub fn generate_dataset(
    model: &BenchmarkModel,
    settings: &GeneratorSettings,
    ranges: &[(f64, f64)],
    n: usize,
    prefix: &str,
    domain: DomainTag,
    seed: u64,
) -> Result<Dataset> {
    if ranges.len() != model.design_dim() {
        return Err(CalvalError::DimensionMismatch {
            context: "generator design ranges".into(),
            expected: model.design_dim(),
            actual: ranges.len(),
        });
    }
    for (i, (lo, hi)) in ranges.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(CalvalError::invalid(format!(
                "generator range for dimension {i} must satisfy lower < upper, got ({lo}, {hi})"
            )));
        }
    }
    if n == 0 {
        return Err(CalvalError::TooFew {
            context: "generator sample size".into(),
            needed: 1,
            got: 0,
        });
    }
    if !(settings.noise_sd.is_finite() && settings.noise_sd >= 0.0) {
        return Err(CalvalError::invalid(format!(
            "noise standard deviation {} must be nonnegative",
            settings.noise_sd
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let designs: Vec<DesignPoint> = (0..n)
        .map(|_| {
            DesignPoint::new(
                ranges
                    .iter()
                    .map(|(lo, hi)| rng.random_range(*lo..*hi))
                    .collect(),
            )
        })
        .collect();

    let noise = Normal::new(0.0, settings.noise_sd.max(f64::MIN_POSITIVE))
        .map_err(|e| CalvalError::invalid(format!("noise distribution: {e}")))?;

    let mut ds = Dataset::new(
        model.design_names().iter().map(|s| s.to_string()).collect(),
        model.qoi_names().iter().map(|s| s.to_string()).collect(),
    );
    let var = settings.noise_sd * settings.noise_sd;
    for (i, x) in designs.into_iter().enumerate() {
        let mut y = model.evaluate(&x, &settings.theta_star)?;
        if settings.inject_bias {
            let bias = model.injected_bias(&x)?;
            for (v, b) in y.values.iter_mut().zip(&bias.values) {
                *v += b;
            }
        }
        // The discrepancy can push a railed response marginally outside the
        // physical range; measurements are void fractions, so clamp.
        for v in y.values.iter_mut() {
            *v = v.clamp(0.0, 100.0);
        }
        if let Some(family) = settings.distortion {
            for v in y.values.iter_mut() {
                *v = distort_void_fraction(*v, family)?;
            }
        }
        let measured: Vec<f64> = y
            .values
            .iter()
            .map(|v| {
                let noisy = if settings.noise_sd > 0.0 {
                    v + noise.sample(&mut rng)
                } else {
                    *v
                };
                noisy.clamp(0.0, 100.0)
            })
            .collect();
        ds.observations.push(Observation {
            test_id: format!("{prefix}{:03}", i + 1),
            design: x,
            measured: QoIVector::new(measured),
            measurement_variance: vec![var; model.qoi_dim()],
            domain,
        });
    }
    ds.validate()?;
    Ok(ds)
}
