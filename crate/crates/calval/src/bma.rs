//! Bayes-model-averaged prediction: posterior model weights from Bayes
//! factors, two-component Gaussian mixture moments, ensemble prediction
//! statistics, and prediction-error reporting.

use std::path::Path;

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::{CalvalError, Result};
use crate::stats::{mean, std_dev};
use crate::surrogate::SurrogateModel;

/// How the mixture spread is formed from component moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixtureMode {
    /// Full second-moment mixture variance, including the spread between
    /// component means.
    #[default]
    FullVariance,
    /// Weighted average of component standard deviations. Narrower;
    /// ignores disagreement between the component means.
    WeightedStd,
}

/// Model weights implied by a Bayes factor `B` comparing the calibrated
/// model against the prior model: the prior model receives `1/(B+1)` and
/// the calibrated model `B/(B+1)`.
///
/// Returns `(prior_weight, calibrated_weight)`. An infinite factor puts
/// all weight on the calibrated model; zero, negative, or undefined
/// factors are errors because they signal an upstream evidence failure.
pub fn bma_weights(bf: f64) -> Result<(f64, f64)> {
    if bf.is_nan() {
        return Err(CalvalError::invalid(
            "Bayes factor is undefined; cannot form model weights",
        ));
    }
    if bf == f64::INFINITY {
        return Ok((0.0, 1.0));
    }
    if bf <= 0.0 {
        return Err(CalvalError::invalid(format!(
            "Bayes factor must be positive to form model weights, got {bf}"
        )));
    }
    let w_prior = 1.0 / (bf + 1.0);
    Ok((w_prior, 1.0 - w_prior))
}

/// Mean and standard deviation of a two-component Gaussian mixture.
///
/// `w0 + w1` must equal 1 within 1e-9 and both weights must be
/// nonnegative. The variance is the full second-moment form
/// `w0 (s0^2 + m0^2) + w1 (s1^2 + m1^2) - mean^2`, clamped at zero
/// against rounding.
pub fn mixture_moments(
    w0: f64,
    m0: f64,
    s0: f64,
    w1: f64,
    m1: f64,
    s1: f64,
) -> Result<(f64, f64)> {
    check_weights(w0, w1)?;
    let mu = w0 * m0 + w1 * m1;
    let var = w0 * (s0 * s0 + m0 * m0) + w1 * (s1 * s1 + m1 * m1) - mu * mu;
    Ok((mu, var.max(0.0).sqrt()))
}

/// Mixture mean with the weighted-standard-deviation spread instead of the
/// full mixture variance.
pub fn weighted_std_moments(
    w0: f64,
    m0: f64,
    s0: f64,
    w1: f64,
    m1: f64,
    s1: f64,
) -> Result<(f64, f64)> {
    check_weights(w0, w1)?;
    Ok((w0 * m0 + w1 * m1, w0 * s0 + w1 * s1))
}

fn check_weights(w0: f64, w1: f64) -> Result<()> {
    if !(w0 >= 0.0 && w1 >= 0.0) {
        return Err(CalvalError::invalid(format!(
            "mixture weights must be nonnegative, got {w0} and {w1}"
        )));
    }
    if ((w0 + w1) - 1.0).abs() > 1e-9 {
        return Err(CalvalError::invalid(format!(
            "mixture weights must sum to 1, got {}",
            w0 + w1
        )));
    }
    Ok(())
}

/// Per-test predictive mean and spread of one model over a dataset.
///
/// The spread is the standard deviation of surrogate means across the
/// parameter ensemble: parametric uncertainty only.
#[derive(Debug, Clone)]
pub struct PredictionStats {
    pub model: String,
    pub test_ids: Vec<String>,
    pub qoi_names: Vec<String>,
    /// `mean[t][k]`: QoI `k` of test `t`.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

/// Push a parameter ensemble through the surrogate at every design in
/// `data` and summarize the predictive distribution per test and QoI.
pub fn ensemble_prediction_stats(
    model_name: &str,
    data: &Dataset,
    surrogate: &SurrogateModel,
    thetas: &DMatrix<f64>,
) -> Result<PredictionStats> {
    if data.is_empty() {
        return Err(CalvalError::Dataset(
            "cannot predict over an empty dataset".into(),
        ));
    }
    if thetas.nrows() < 2 {
        return Err(CalvalError::TooFew {
            context: "prediction ensemble".into(),
            needed: 2,
            got: thetas.nrows(),
        });
    }
    let designs: Vec<_> = data.observations.iter().map(|o| o.design.clone()).collect();
    let prep = surrogate.prepare(&designs)?;
    let (means, _) = prep.predict_ensemble(thetas)?;
    let n_tests = data.len();
    let n_qoi = data.qoi_dim();
    let mut out_mean = vec![vec![0.0; n_qoi]; n_tests];
    let mut out_std = vec![vec![0.0; n_qoi]; n_tests];
    for k in 0..n_qoi {
        for t in 0..n_tests {
            let col: Vec<f64> = means[k].column(t).iter().copied().collect();
            out_mean[t][k] = mean(&col);
            out_std[t][k] = std_dev(&col);
        }
    }
    Ok(PredictionStats {
        model: model_name.to_string(),
        test_ids: data.observations.iter().map(|o| o.test_id.clone()).collect(),
        qoi_names: data.qoi_names.clone(),
        mean: out_mean,
        std: out_std,
    })
}

/// Mix two models' prediction statistics with per-QoI weights on the
/// second (calibrated) component.
///
/// `calibrated_weight[k]` is the weight of `calibrated` for QoI `k`; the
/// prior component receives the complement.
pub fn mix_predictions(
    model_name: &str,
    prior: &PredictionStats,
    calibrated: &PredictionStats,
    calibrated_weight: &[f64],
    mode: MixtureMode,
) -> Result<PredictionStats> {
    if prior.test_ids != calibrated.test_ids || prior.qoi_names != calibrated.qoi_names {
        return Err(CalvalError::invalid(
            "prediction statistics cover different tests or QoIs",
        ));
    }
    let n_qoi = prior.qoi_names.len();
    if calibrated_weight.len() != n_qoi {
        return Err(CalvalError::DimensionMismatch {
            context: "mixture weights per QoI".into(),
            expected: n_qoi,
            actual: calibrated_weight.len(),
        });
    }
    let n_tests = prior.test_ids.len();
    let mut out_mean = vec![vec![0.0; n_qoi]; n_tests];
    let mut out_std = vec![vec![0.0; n_qoi]; n_tests];
    for k in 0..n_qoi {
        let w1 = calibrated_weight[k];
        let w0 = 1.0 - w1;
        for t in 0..n_tests {
            let (m, s) = match mode {
                MixtureMode::FullVariance => mixture_moments(
                    w0,
                    prior.mean[t][k],
                    prior.std[t][k],
                    w1,
                    calibrated.mean[t][k],
                    calibrated.std[t][k],
                )?,
                MixtureMode::WeightedStd => weighted_std_moments(
                    w0,
                    prior.mean[t][k],
                    prior.std[t][k],
                    w1,
                    calibrated.mean[t][k],
                    calibrated.std[t][k],
                )?,
            };
            out_mean[t][k] = m;
            out_std[t][k] = s;
        }
    }
    Ok(PredictionStats {
        model: model_name.to_string(),
        test_ids: prior.test_ids.clone(),
        qoi_names: prior.qoi_names.clone(),
        mean: out_mean,
        std: out_std,
    })
}

/// Mean absolute prediction error of one model for one QoI.
#[derive(Debug, Clone)]
pub struct ErrorRow {
    pub dataset: String,
    pub model: String,
    pub qoi: String,
    pub mean_abs_error: f64,
}

/// Mean absolute error of predictive means against the measurements in
/// `data`, per QoI.
pub fn error_report(
    dataset: &str,
    stats: &PredictionStats,
    data: &Dataset,
) -> Result<Vec<ErrorRow>> {
    let ids: Vec<String> = data.observations.iter().map(|o| o.test_id.clone()).collect();
    if stats.test_ids != ids || stats.qoi_names != data.qoi_names {
        return Err(CalvalError::invalid(
            "prediction statistics do not match the dataset being scored",
        ));
    }
    let n_tests = data.len();
    let mut rows = Vec::with_capacity(stats.qoi_names.len());
    for (k, qoi) in stats.qoi_names.iter().enumerate() {
        let mut acc = 0.0;
        for (t, obs) in data.observations.iter().enumerate() {
            acc += (stats.mean[t][k] - obs.measured.values[k]).abs();
        }
        rows.push(ErrorRow {
            dataset: dataset.to_string(),
            model: stats.model.clone(),
            qoi: qoi.clone(),
            mean_abs_error: acc / n_tests as f64,
        });
    }
    Ok(rows)
}

/// Write prediction statistics as CSV:
/// `dataset,model,test_id,qoi,mean,std`.
pub fn write_prediction_csv(
    path: &Path,
    dataset: &str,
    stats_list: &[&PredictionStats],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dataset", "model", "test_id", "qoi", "mean", "std"])?;
    for stats in stats_list {
        for (t, id) in stats.test_ids.iter().enumerate() {
            for (k, qoi) in stats.qoi_names.iter().enumerate() {
                w.write_record([
                    dataset,
                    stats.model.as_str(),
                    id.as_str(),
                    qoi.as_str(),
                    &format!("{:.17e}", stats.mean[t][k]),
                    &format!("{:.17e}", stats.std[t][k]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Write error rows as CSV: `dataset,model,qoi,mean_abs_error`.
pub fn write_error_csv(path: &Path, rows: &[ErrorRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dataset", "model", "qoi", "mean_abs_error"])?;
    for r in rows {
        w.write_record([
            r.dataset.as_str(),
            r.model.as_str(),
            r.qoi.as_str(),
            &format!("{:.17e}", r.mean_abs_error),
        ])?;
    }
    w.flush()?;
    Ok(())
}
