//! Bayes-factor validation: Monte Carlo evidence of held-out measurements
//! under competing parameter ensembles, per-test Bayes factors, and their
//! aggregation across a validation campaign.

use std::path::Path;

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::{CalvalError, Result};
use crate::iuq::bias::BiasModel;
use crate::stats::LN_2PI;
use crate::surrogate::SurrogateModel;

/// How per-test Bayes factors are combined across a validation campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Arithmetic mean of the per-test factors.
    #[default]
    Arithmetic,
    /// Geometric mean; equivalent to averaging log factors.
    Geometric,
}

/// Evidence and Bayes-factor settings.
#[derive(Debug, Clone)]
pub struct BfOptions {
    /// Add the discrepancy model's predictive variance to the evidence
    /// variance. Off by default: validation scores the calibrated model
    /// plus code uncertainty against fresh measurements.
    pub include_bias_variance: bool,
    /// Score all QoIs of a test jointly as one diagonal Gaussian instead
    /// of one factor per QoI.
    pub joint_qoi: bool,
    pub aggregation: Aggregation,
}

impl Default for BfOptions {
    fn default() -> Self {
        BfOptions {
            include_bias_variance: false,
            joint_qoi: false,
            aggregation: Aggregation::Arithmetic,
        }
    }
}

/// Monte Carlo evidence of each test under one parameter ensemble.
///
/// `log_evidence[t][c]` is the log of the ensemble-averaged Gaussian
/// density of test `t`'s measurement; columns are QoIs, or the single
/// joint score when the table was built jointly. `rel_se` is the relative
/// Monte Carlo standard error of the evidence on the natural scale.
#[derive(Debug, Clone)]
pub struct EvidenceTable {
    pub test_ids: Vec<String>,
    pub columns: Vec<String>,
    pub log_evidence: Vec<Vec<f64>>,
    pub rel_se: Vec<Vec<f64>>,
    /// Ensemble size the evidence was averaged over.
    pub n: usize,
}

fn log_mean_exp(logs: &[f64]) -> (f64, f64) {
    let n = logs.len() as f64;
    let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let w: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let rel_se = var.sqrt() / (n.sqrt() * mean);
    (peak + mean.ln(), rel_se)
}

/// Compute the evidence of every observation in `data` under the parameter
/// ensemble `thetas` (one row per member).
///
/// For each ensemble member the surrogate supplies a Gaussian predictive
/// density with variance `measurement + code (+ discrepancy when opted
/// in)`; the evidence is the ensemble average of those densities,
/// accumulated in log space.
pub fn ensemble_evidence(
    data: &Dataset,
    surrogate: &SurrogateModel,
    thetas: &DMatrix<f64>,
    bias_model: Option<&BiasModel>,
    opts: &BfOptions,
) -> Result<EvidenceTable> {
    if data.is_empty() {
        return Err(CalvalError::Dataset(
            "cannot score evidence over an empty dataset".into(),
        ));
    }
    if thetas.nrows() == 0 {
        return Err(CalvalError::TooFew {
            context: "evidence ensemble".into(),
            needed: 1,
            got: 0,
        });
    }
    if opts.include_bias_variance && bias_model.is_none() {
        return Err(CalvalError::invalid(
            "discrepancy variance requested but no discrepancy model supplied",
        ));
    }
    let designs: Vec<_> = data.observations.iter().map(|o| o.design.clone()).collect();
    let prep = surrogate.prepare(&designs)?;
    let (means, vars) = prep.predict_ensemble(thetas)?;
    let n_tests = data.len();
    let n_qoi = data.qoi_dim();
    let m = thetas.nrows();

    let mut bias_var = vec![vec![0.0; n_qoi]; n_tests];
    if opts.include_bias_variance {
        let bm = bias_model.unwrap();
        for (t, d) in designs.iter().enumerate() {
            let (_, v) = bm.delta(d)?;
            bias_var[t] = v;
        }
    }

    let columns: Vec<String> = if opts.joint_qoi {
        vec!["joint".to_string()]
    } else {
        data.qoi_names.clone()
    };
    let mut log_evidence = Vec::with_capacity(n_tests);
    let mut rel_se = Vec::with_capacity(n_tests);
    let mut logs = vec![0.0; m];
    for t in 0..n_tests {
        let obs = &data.observations[t];
        let mut row_le = Vec::with_capacity(columns.len());
        let mut row_se = Vec::with_capacity(columns.len());
        if opts.joint_qoi {
            for j in 0..m {
                let mut acc = 0.0;
                for k in 0..n_qoi {
                    let var = obs.measurement_variance[k] + vars[k][(j, t)] + bias_var[t][k];
                    if var <= 0.0 {
                        return Err(CalvalError::SingularCovariance(format!(
                            "test {}, QoI {}: zero predictive variance",
                            obs.test_id, data.qoi_names[k]
                        )));
                    }
                    let r = obs.measured.values[k] - means[k][(j, t)];
                    acc += -0.5 * (LN_2PI + var.ln() + r * r / var);
                }
                logs[j] = acc;
            }
            let (le, se) = log_mean_exp(&logs);
            row_le.push(le);
            row_se.push(se);
        } else {
            for k in 0..n_qoi {
                for j in 0..m {
                    let var = obs.measurement_variance[k] + vars[k][(j, t)] + bias_var[t][k];
                    if var <= 0.0 {
                        return Err(CalvalError::SingularCovariance(format!(
                            "test {}, QoI {}: zero predictive variance",
                            obs.test_id, data.qoi_names[k]
                        )));
                    }
                    let r = obs.measured.values[k] - means[k][(j, t)];
                    logs[j] = -0.5 * (LN_2PI + var.ln() + r * r / var);
                }
                let (le, se) = log_mean_exp(&logs);
                row_le.push(le);
                row_se.push(se);
            }
        }
        log_evidence.push(row_le);
        rel_se.push(row_se);
    }
    Ok(EvidenceTable {
        test_ids: data.observations.iter().map(|o| o.test_id.clone()).collect(),
        columns,
        log_evidence,
        rel_se,
        n: m,
    })
}

/// One per-test, per-column Bayes factor.
#[derive(Debug, Clone)]
pub struct BayesFactorRow {
    pub dataset: String,
    pub bias_mode: String,
    pub test_id: String,
    pub qoi: String,
    pub bf: f64,
    pub mc_se: f64,
    /// Numerator ensemble size.
    pub n0: usize,
    /// Denominator ensemble size.
    pub n1: usize,
}

/// Aggregated Bayes factor keyed by dataset, bias mode, and column.
#[derive(Debug, Clone)]
pub struct AggregatedBf {
    pub dataset: String,
    pub bias_mode: String,
    pub qoi: String,
    pub bf: f64,
}

/// A Bayes factor from two log evidences with its delta-method Monte Carlo
/// standard error.
///
/// Bitwise-equal evidences give exactly 1. A numerator that underflowed to
/// zero gives 0; a denominator that underflowed while the numerator did
/// not gives the positive-infinity sentinel. Both cases are diagnosable
/// from the returned value, and the infinite sentinel is logged.
pub fn bf_from_log_evidence(
    log_ev0: f64,
    log_ev1: f64,
    rel_se0: f64,
    rel_se1: f64,
) -> (f64, f64) {
    if log_ev0 == log_ev1 {
        if log_ev0 == f64::NEG_INFINITY {
            log::warn!("evidence underflowed to zero on both sides; Bayes factor undefined");
            return (f64::NAN, f64::NAN);
        }
        return (1.0, (rel_se0 * rel_se0 + rel_se1 * rel_se1).sqrt());
    }
    if log_ev1 == f64::NEG_INFINITY {
        log::warn!("denominator evidence underflowed to zero; reporting an infinite Bayes factor");
        return (f64::INFINITY, f64::INFINITY);
    }
    if log_ev0 == f64::NEG_INFINITY {
        return (0.0, 0.0);
    }
    let bf = (log_ev0 - log_ev1).exp();
    (bf, bf * (rel_se0 * rel_se0 + rel_se1 * rel_se1).sqrt())
}

/// Per-test Bayes factors of `numer` against `denom`.
///
/// The two tables must cover the same tests and columns (they normally
/// come from [`ensemble_evidence`] on the same dataset with different
/// ensembles).
pub fn bayes_factors(
    dataset: &str,
    bias_mode: &str,
    numer: &EvidenceTable,
    denom: &EvidenceTable,
) -> Result<Vec<BayesFactorRow>> {
    if numer.test_ids != denom.test_ids || numer.columns != denom.columns {
        return Err(CalvalError::invalid(
            "evidence tables cover different tests or columns",
        ));
    }
    let mut rows = Vec::with_capacity(numer.test_ids.len() * numer.columns.len());
    for t in 0..numer.test_ids.len() {
        for (c, col) in numer.columns.iter().enumerate() {
            let (bf, mc_se) = bf_from_log_evidence(
                numer.log_evidence[t][c],
                denom.log_evidence[t][c],
                numer.rel_se[t][c],
                denom.rel_se[t][c],
            );
            rows.push(BayesFactorRow {
                dataset: dataset.to_string(),
                bias_mode: bias_mode.to_string(),
                test_id: numer.test_ids[t].clone(),
                qoi: col.clone(),
                bf,
                mc_se,
                n0: numer.n,
                n1: denom.n,
            });
        }
    }
    Ok(rows)
}

/// Aggregate per-test Bayes factors into one factor per
/// `(dataset, bias_mode, qoi)` key, preserving first-seen key order.
///
/// Infinite or undefined per-test factors poison their key's aggregate,
/// which is intentional: a campaign containing an undefined comparison has
/// no meaningful average.
pub fn aggregate_bayes_factors(rows: &[BayesFactorRow], how: Aggregation) -> Vec<AggregatedBf> {
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut acc: std::collections::HashMap<(String, String, String), Vec<f64>> =
        std::collections::HashMap::new();
    for r in rows {
        let key = (r.dataset.clone(), r.bias_mode.clone(), r.qoi.clone());
        if !acc.contains_key(&key) {
            order.push(key.clone());
        }
        acc.entry(key).or_default().push(r.bf);
    }
    order
        .into_iter()
        .map(|key| {
            let vals = &acc[&key];
            let n = vals.len() as f64;
            let bf = match how {
                Aggregation::Arithmetic => vals.iter().sum::<f64>() / n,
                Aggregation::Geometric => (vals.iter().map(|v| v.ln()).sum::<f64>() / n).exp(),
            };
            AggregatedBf {
                dataset: key.0,
                bias_mode: key.1,
                qoi: key.2,
                bf,
            }
        })
        .collect()
}

/// Write per-test factors as CSV:
/// `dataset,bias_mode,test_id,qoi,bf,mc_se,n0,n1`.
pub fn write_bf_csv(path: &Path, rows: &[BayesFactorRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dataset", "bias_mode", "test_id", "qoi", "bf", "mc_se", "n0", "n1"])?;
    for r in rows {
        w.write_record([
            r.dataset.as_str(),
            r.bias_mode.as_str(),
            r.test_id.as_str(),
            r.qoi.as_str(),
            &format!("{:.17e}", r.bf),
            &format!("{:.17e}", r.mc_se),
            &r.n0.to_string(),
            &r.n1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write aggregated factors as CSV: `dataset,bias_mode,qoi,bf`.
pub fn write_aggregated_csv(path: &Path, rows: &[AggregatedBf]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dataset", "bias_mode", "qoi", "bf"])?;
    for r in rows {
        w.write_record([
            r.dataset.as_str(),
            r.bias_mode.as_str(),
            r.qoi.as_str(),
            &format!("{:.17e}", r.bf),
        ])?;
    }
    w.flush()?;
    Ok(())
}
