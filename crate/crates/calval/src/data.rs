//! Observations, datasets, CSV round-tripping, and the
//! validation/prediction split.

use crate::error::{CalvalError, Result};
use crate::model::correction::{
    correct_void_fraction, correction_derivative, CorrectionFamily,
};
use crate::model::{DesignPoint, QoIVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

/// Which stage of the study an observation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    /// Used to calibrate the physical-model parameters.
    Iuq,
    /// Held out to score competing parameter ensembles.
    Validation,
    /// Withheld entirely until the final predictive comparison.
    Prediction,
}

impl std::fmt::Display for DomainTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DomainTag::Iuq => "iuq",
            DomainTag::Validation => "validation",
            DomainTag::Prediction => "prediction",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for DomainTag {
    type Err = CalvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iuq" => Ok(DomainTag::Iuq),
            "validation" => Ok(DomainTag::Validation),
            "prediction" => Ok(DomainTag::Prediction),
            other => Err(CalvalError::Dataset(format!(
                "unknown domain tag `{other}`"
            ))),
        }
    }
}

/// One experimental observation: a design point, measured QoI values, and
/// per-QoI measurement variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub test_id: String,
    pub design: DesignPoint,
    pub measured: QoIVector,
    pub measurement_variance: Vec<f64>,
    pub domain: DomainTag,
}

/// A named collection of observations with consistent dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub design_names: Vec<String>,
    pub qoi_names: Vec<String>,
    pub observations: Vec<Observation>,
}

impl Dataset {
    pub fn new(design_names: Vec<String>, qoi_names: Vec<String>) -> Self {
        Dataset {
            design_names,
            qoi_names,
            observations: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn design_dim(&self) -> usize {
        self.design_names.len()
    }

    pub fn qoi_dim(&self) -> usize {
        self.qoi_names.len()
    }

    /// Check structural invariants: unique test ids, consistent dimensions,
    /// finite values, and nonnegative measurement variances.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for obs in &self.observations {
            if !seen.insert(obs.test_id.as_str()) {
                return Err(CalvalError::Dataset(format!(
                    "duplicate test id `{}`",
                    obs.test_id
                )));
            }
            if obs.design.dim() != self.design_dim() {
                return Err(CalvalError::DimensionMismatch {
                    context: format!("design point of `{}`", obs.test_id),
                    expected: self.design_dim(),
                    actual: obs.design.dim(),
                });
            }
            if obs.measured.dim() != self.qoi_dim()
                || obs.measurement_variance.len() != self.qoi_dim()
            {
                return Err(CalvalError::DimensionMismatch {
                    context: format!("QoI values of `{}`", obs.test_id),
                    expected: self.qoi_dim(),
                    actual: obs.measured.dim(),
                });
            }
            for v in obs.design.values.iter().chain(&obs.measured.values) {
                if !v.is_finite() {
                    return Err(CalvalError::NonFinite(format!(
                        "observation `{}`",
                        obs.test_id
                    )));
                }
            }
            for var in &obs.measurement_variance {
                if !var.is_finite() || *var < 0.0 {
                    return Err(CalvalError::Dataset(format!(
                        "negative or non-finite measurement variance in `{}`",
                        obs.test_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Write the dataset as CSV with the column layout
    /// `test_id, <design names...>, <qoi names...>, <qoi names>_var..., domain`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.validate()?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["test_id".to_string()];
        header.extend(self.design_names.iter().cloned());
        header.extend(self.qoi_names.iter().cloned());
        header.extend(self.qoi_names.iter().map(|q| format!("{q}_var")));
        header.push("domain".to_string());
        w.write_record(&header)?;
        for obs in &self.observations {
            let mut rec = vec![obs.test_id.clone()];
            rec.extend(obs.design.values.iter().map(|v| v.to_string()));
            rec.extend(obs.measured.values.iter().map(|v| v.to_string()));
            rec.extend(obs.measurement_variance.iter().map(|v| v.to_string()));
            rec.push(obs.domain.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a dataset written by [`Dataset::write_csv`], recovering design
    /// and QoI names from the header.
    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r
            .headers()?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if header.len() < 4 || header[0] != "test_id" || header.last().map(String::as_str) != Some("domain")
        {
            return Err(CalvalError::Dataset(format!(
                "malformed header in {}: expected `test_id, ..., domain`",
                path.display()
            )));
        }
        let inner = &header[1..header.len() - 1];
        let var_count = inner.iter().filter(|c| c.ends_with("_var")).count();
        if var_count == 0 || inner.len() < 2 * var_count {
            return Err(CalvalError::Dataset(format!(
                "header in {} has no recognizable `<qoi>_var` columns",
                path.display()
            )));
        }
        let qoi_start = inner.len() - 2 * var_count;
        let design_names: Vec<String> = inner[..qoi_start].to_vec();
        let qoi_names: Vec<String> = inner[qoi_start..qoi_start + var_count].to_vec();
        for (q, v) in qoi_names.iter().zip(&inner[qoi_start + var_count..]) {
            if format!("{q}_var") != *v {
                return Err(CalvalError::Dataset(format!(
                    "variance column `{v}` does not match QoI column `{q}`"
                )));
            }
        }
        let mut ds = Dataset::new(design_names, qoi_names);
        let (dx, dy) = (ds.design_dim(), ds.qoi_dim());
        for row in r.records() {
            let row = row?;
            if row.len() != header.len() {
                return Err(CalvalError::Dataset(format!(
                    "row with {} fields, expected {}",
                    row.len(),
                    header.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|_| {
                    CalvalError::Dataset(format!("unparseable number `{s}`"))
                })
            };
            let design: Vec<f64> = row
                .iter()
                .skip(1)
                .take(dx)
                .map(parse)
                .collect::<Result<_>>()?;
            let measured: Vec<f64> = row
                .iter()
                .skip(1 + dx)
                .take(dy)
                .map(parse)
                .collect::<Result<_>>()?;
            let variance: Vec<f64> = row
                .iter()
                .skip(1 + dx + dy)
                .take(dy)
                .map(parse)
                .collect::<Result<_>>()?;
            ds.observations.push(Observation {
                test_id: row[0].to_string(),
                design: DesignPoint::new(design),
                measured: QoIVector::new(measured),
                measurement_variance: variance,
                domain: row[header.len() - 1].parse()?,
            });
        }
        ds.validate()?;
        Ok(ds)
    }

    /// Deterministically split an experiment pool into a validation set and
    /// a prediction set.
    ///
    /// Membership is decided by a seeded shuffle; the validation set
    /// receives `ceil(n / 2)` observations. Both outputs keep the original
    /// observation order and have their domain tags rewritten.
    pub fn split(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        if self.is_empty() {
            return Err(CalvalError::Dataset(
                "cannot split an empty dataset".into(),
            ));
        }
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let n_val = n.div_ceil(2);
        let val_set: HashSet<usize> = idx[..n_val].iter().copied().collect();
        let mut validation = Dataset::new(self.design_names.clone(), self.qoi_names.clone());
        let mut prediction = Dataset::new(self.design_names.clone(), self.qoi_names.clone());
        for (i, obs) in self.observations.iter().enumerate() {
            let mut obs = obs.clone();
            if val_set.contains(&i) {
                obs.domain = DomainTag::Validation;
                validation.observations.push(obs);
            } else {
                obs.domain = DomainTag::Prediction;
                prediction.observations.push(obs);
            }
        }
        Ok((validation, prediction))
    }

    /// Apply a measurement correction to every QoI except the listed
    /// exempt columns, propagating measurement variance through the
    /// correction with the delta method.
    pub fn apply_correction(
        &self,
        family: CorrectionFamily,
        exempt_qois: &[usize],
    ) -> Result<Dataset> {
        for e in exempt_qois {
            if *e >= self.qoi_dim() {
                return Err(CalvalError::invalid(format!(
                    "exempt QoI index {e} out of range for {} QoIs",
                    self.qoi_dim()
                )));
            }
        }
        let mut out = self.clone();
        for obs in &mut out.observations {
            for k in 0..self.qoi_dim() {
                if exempt_qois.contains(&k) {
                    continue;
                }
                let raw = obs.measured.values[k];
                let d = correction_derivative(raw, family)?;
                obs.measured.values[k] = correct_void_fraction(raw, family)?;
                obs.measurement_variance[k] *= d * d;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_dataset(n: usize) -> Dataset {
        let mut ds = Dataset::new(
            vec!["a".into(), "b".into()],
            vec!["q1".into(), "q2".into()],
        );
        for i in 0..n {
            ds.observations.push(Observation {
                test_id: format!("T{i:03}"),
                design: DesignPoint::new(vec![i as f64, 2.0 * i as f64]),
                measured: QoIVector::new(vec![30.0 + i as f64, 50.0 + i as f64]),
                measurement_variance: vec![2.25, 2.25],
                domain: DomainTag::Validation,
            });
        }
        ds
    }

    #[test]
    fn csv_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let ds = toy_dataset(7);
        ds.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut ds = toy_dataset(3);
        ds.observations[2].test_id = "T000".into();
        assert!(ds.validate().is_err());
    }

    #[test]
    fn negative_variance_rejected() {
        let mut ds = toy_dataset(2);
        ds.observations[0].measurement_variance[1] = -1.0;
        assert!(ds.validate().is_err());
    }

    #[test]
    fn split_partitions_and_rewrites_domains() {
        let ds = toy_dataset(9);
        let (val, pred) = ds.split(42).unwrap();
        assert_eq!(val.len(), 5);
        assert_eq!(pred.len(), 4);
        assert!(val.observations.iter().all(|o| o.domain == DomainTag::Validation));
        assert!(pred.observations.iter().all(|o| o.domain == DomainTag::Prediction));
        let mut ids: Vec<&str> = val
            .observations
            .iter()
            .chain(&pred.observations)
            .map(|o| o.test_id.as_str())
            .collect();
        ids.sort_unstable();
        let mut expected: Vec<String> = (0..9).map(|i| format!("T{i:03}")).collect();
        expected.sort_unstable();
        assert_eq!(ids, expected.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_deterministic() {
        let ds = toy_dataset(20);
        let (v1, p1) = ds.split(7).unwrap();
        let (v2, p2) = ds.split(7).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn correction_skips_exempt_columns() {
        let ds = toy_dataset(3);
        let corrected = ds
            .apply_correction(CorrectionFamily::Standard, &[1])
            .unwrap();
        for (orig, corr) in ds.observations.iter().zip(&corrected.observations) {
            assert!(corr.measured.values[0] < orig.measured.values[0]);
            assert_eq!(corr.measured.values[1], orig.measured.values[1]);
            assert_eq!(corr.measurement_variance[1], orig.measurement_variance[1]);
            let d = correction_derivative(orig.measured.values[0], CorrectionFamily::Standard)
                .unwrap();
            assert_relative_eq!(
                corr.measurement_variance[0],
                orig.measurement_variance[0] * d * d,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn exempt_index_out_of_range_errors() {
        let ds = toy_dataset(2);
        assert!(ds.apply_correction(CorrectionFamily::Standard, &[5]).is_err());
    }
}
