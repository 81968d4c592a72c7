//! Run configuration: one TOML file freezes every scientific knob and
//! every random seed, so a run is reproducible from the config alone.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayes_factor::Aggregation;
use crate::bma::MixtureMode;
use crate::error::{CalvalError, Result};
use crate::model::correction::CorrectionFamily;
use crate::model::{ParamVector, PriorSpec, THETA_DIM};

/// Schema version this build reads and writes.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Synthetic measurement generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Parameter values the synthetic experiments are generated at.
    pub theta_star: Vec<f64>,
    /// Measurement noise standard deviation in QoI units.
    pub noise_sd: f64,
    /// Include the structural model discrepancy in the measurements.
    pub inject_bias: bool,
    /// Report readings as an uncorrected instrument of this family would.
    pub distortion: Option<String>,
    /// Calibration campaign size.
    pub n_iuq: usize,
    /// Experiment pool size, split between validation and prediction.
    pub n_experiments: usize,
    /// Design ranges for the calibration campaign.
    pub iuq_ranges: Vec<[f64; 2]>,
    /// Design ranges for the experiment pool.
    pub experiment_ranges: Vec<[f64; 2]>,
}

/// Instrument-correction applied to the calibration data at ingest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionConfig {
    pub family: String,
    /// QoI names the correction must not touch.
    pub exempt_qois: Vec<String>,
}

/// Surrogate training domain and budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    pub x_ranges: Vec<[f64; 2]>,
    /// One range shared by all parameter dimensions.
    pub theta_range: [f64; 2],
    pub n_train: usize,
}

/// Calibration prior box and chain start.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub initial: Vec<f64>,
}

/// Posterior sampling budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSettings {
    pub n_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
}

/// Bayes-factor validation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    pub ensemble_size: usize,
    pub include_bias_variance: bool,
    pub joint_qoi: bool,
    /// "arithmetic" or "geometric".
    pub aggregation: String,
}

/// Model-averaged prediction settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionConfig {
    pub ensemble_size: usize,
    /// "full_variance" or "weighted_std".
    pub mixture_mode: String,
}

/// Every random seed in the pipeline, stated explicitly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub surrogate: u64,
    pub experiments: u64,
    pub split: u64,
    pub iuq: u64,
    pub bias: u64,
    /// Base chain seed; the no-discrepancy chain uses it as is and the
    /// with-discrepancy chain adds one.
    pub chain: u64,
    pub bayes_factor: u64,
    pub bma: u64,
}

/// Stable per-seed offsets used by the seed override: each stage keeps a
/// distinct stream even when all seeds are rebased onto one value.
const SEED_OFFSETS: [(&str, u64); 8] = [
    ("surrogate", 0),
    ("experiments", 1),
    ("split", 2),
    ("iuq", 3),
    ("bias", 4),
    ("chain", 5),
    ("bayes_factor", 7),
    ("bma", 8),
];

/// The complete run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Label stamped into every output table.
    pub dataset_label: String,
    pub generator: GeneratorConfig,
    pub correction: Option<CorrectionConfig>,
    pub surrogate: SurrogateConfig,
    pub prior: PriorConfig,
    pub mcmc: McmcSettings,
    pub validation: ValidationConfig,
    pub prediction: PredictionConfig,
    pub seeds: Seeds,
}

impl RunConfig {
    /// Read and validate a configuration file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CalvalError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CalvalError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check internal consistency; every load goes through this.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CalvalError::Config(format!(
                "schema version {} not supported (this build reads {})",
                self.schema_version, CONFIG_SCHEMA_VERSION
            )));
        }
        if self.dataset_label.is_empty() {
            return Err(CalvalError::Config("dataset label must not be empty".into()));
        }
        if self
            .dataset_label
            .chars()
            .any(|c| !(c.is_ascii_alphanumeric() || c == '_' || c == '-'))
        {
            return Err(CalvalError::Config(format!(
                "dataset label '{}' may only contain alphanumerics, '-' and '_'",
                self.dataset_label
            )));
        }

        let g = &self.generator;
        if g.theta_star.len() != THETA_DIM {
            return Err(CalvalError::Config(format!(
                "theta_star needs {THETA_DIM} entries, got {}",
                g.theta_star.len()
            )));
        }
        if !(g.noise_sd > 0.0 && g.noise_sd.is_finite()) {
            return Err(CalvalError::Config("noise_sd must be positive".into()));
        }
        if let Some(d) = &g.distortion {
            CorrectionFamily::from_str(d)
                .map_err(|e| CalvalError::Config(format!("distortion: {e}")))?;
        }
        if g.n_iuq < 5 {
            return Err(CalvalError::Config(
                "n_iuq must be at least 5 to support discrepancy estimation".into(),
            ));
        }
        if g.n_experiments < 4 {
            return Err(CalvalError::Config(
                "n_experiments must be at least 4 to split into validation and prediction".into(),
            ));
        }
        for (name, ranges) in [
            ("generator.iuq_ranges", &g.iuq_ranges),
            ("generator.experiment_ranges", &g.experiment_ranges),
            ("surrogate.x_ranges", &self.surrogate.x_ranges),
        ] {
            if ranges.len() != 4 {
                return Err(CalvalError::Config(format!(
                    "{name} needs 4 ranges, got {}",
                    ranges.len()
                )));
            }
            for r in ranges.iter() {
                if !r[0].is_finite() || !r[1].is_finite() || r[0] >= r[1] {
                    return Err(CalvalError::Config(format!(
                        "{name} contains an empty or non-finite range [{}, {}]",
                        r[0], r[1]
                    )));
                }
            }
        }
        let tr = self.surrogate.theta_range;
        if !tr[0].is_finite() || !tr[1].is_finite() || tr[0] >= tr[1] {
            return Err(CalvalError::Config(
                "surrogate.theta_range must be a nonempty interval".into(),
            ));
        }
        if self.surrogate.n_train < 10 {
            return Err(CalvalError::Config(
                "surrogate.n_train must be at least 10".into(),
            ));
        }

        let prior = self.prior_spec()?;
        if !prior.contains(&self.prior.initial) {
            return Err(CalvalError::Config(
                "prior.initial lies outside the prior box".into(),
            ));
        }

        if self.mcmc.n_steps == 0 || self.mcmc.burn_in >= self.mcmc.n_steps {
            return Err(CalvalError::Config(
                "mcmc.burn_in must be smaller than mcmc.n_steps".into(),
            ));
        }
        if self.mcmc.thin == 0 {
            return Err(CalvalError::Config("mcmc.thin must be at least 1".into()));
        }
        if self.validation.ensemble_size < 2 || self.prediction.ensemble_size < 2 {
            return Err(CalvalError::Config(
                "validation and prediction ensembles need at least 2 members".into(),
            ));
        }
        self.aggregation()?;
        self.mixture_mode()?;
        if let Some(c) = &self.correction {
            CorrectionFamily::from_str(&c.family)
                .map_err(|e| CalvalError::Config(format!("correction: {e}")))?;
        }
        Ok(())
    }

    /// Prior box with the configured chain start as its nominal point.
    pub fn prior_spec(&self) -> Result<PriorSpec> {
        if self.prior.lower.len() != THETA_DIM
            || self.prior.upper.len() != THETA_DIM
            || self.prior.initial.len() != THETA_DIM
        {
            return Err(CalvalError::Config(format!(
                "prior vectors need {THETA_DIM} entries"
            )));
        }
        PriorSpec::new(
            self.prior.lower.clone(),
            self.prior.upper.clone(),
            self.prior.initial.clone(),
        )
    }

    pub fn theta_star(&self) -> ParamVector {
        ParamVector::new(self.generator.theta_star.clone())
    }

    pub fn distortion_family(&self) -> Result<Option<CorrectionFamily>> {
        match &self.generator.distortion {
            None => Ok(None),
            Some(d) => Ok(Some(CorrectionFamily::from_str(d)?)),
        }
    }

    pub fn correction_family(&self) -> Result<Option<(CorrectionFamily, Vec<String>)>> {
        match &self.correction {
            None => Ok(None),
            Some(c) => Ok(Some((
                CorrectionFamily::from_str(&c.family)?,
                c.exempt_qois.clone(),
            ))),
        }
    }

    pub fn aggregation(&self) -> Result<Aggregation> {
        match self.validation.aggregation.as_str() {
            "arithmetic" => Ok(Aggregation::Arithmetic),
            "geometric" => Ok(Aggregation::Geometric),
            other => Err(CalvalError::Config(format!(
                "validation.aggregation must be 'arithmetic' or 'geometric', got '{other}'"
            ))),
        }
    }

    pub fn mixture_mode(&self) -> Result<MixtureMode> {
        match self.prediction.mixture_mode.as_str() {
            "full_variance" => Ok(MixtureMode::FullVariance),
            "weighted_std" => Ok(MixtureMode::WeightedStd),
            other => Err(CalvalError::Config(format!(
                "prediction.mixture_mode must be 'full_variance' or 'weighted_std', got '{other}'"
            ))),
        }
    }

    /// Built-in demonstration configuration: the synthetic benchmark
    /// campaign every guide example and the shipped `configs/demo.toml`
    /// use.
    pub fn demo() -> RunConfig {
        RunConfig {
            schema_version: 1,
            dataset_label: "demo".into(),
            generator: GeneratorConfig {
                theta_star: vec![1.2, 0.9, 1.1, 0.8, 1.05],
                noise_sd: 1.5,
                inject_bias: true,
                distortion: Some("standard".into()),
                n_iuq: 48,
                n_experiments: 86,
                iuq_ranges: vec![[7.0, 7.3], [12.0, 18.0], [5.85, 7.8], [277.0, 281.0]],
                experiment_ranges: vec![[7.1, 7.4], [11.0, 19.0], [4.55, 7.15], [284.0, 287.0]],
            },
            correction: Some(CorrectionConfig {
                family: "standard".into(),
                exempt_qois: vec!["VoidF4".into()],
            }),
            surrogate: SurrogateConfig {
                x_ranges: vec![[7.0, 7.4], [11.0, 19.0], [4.55, 7.8], [277.0, 287.0]],
                theta_range: [0.25, 2.5],
                n_train: 150,
            },
            prior: PriorConfig {
                lower: vec![0.0; 5],
                upper: vec![5.0; 5],
                initial: vec![1.0; 5],
            },
            mcmc: McmcSettings {
                n_steps: 16_000,
                burn_in: 6_000,
                thin: 1,
            },
            validation: ValidationConfig {
                ensemble_size: 4_000,
                include_bias_variance: false,
                joint_qoi: false,
                aggregation: "arithmetic".into(),
            },
            prediction: PredictionConfig {
                ensemble_size: 2_000,
                mixture_mode: "full_variance".into(),
            },
            seeds: Seeds {
                surrogate: 2024,
                experiments: 555,
                split: 556,
                iuq: 100,
                bias: 0,
                chain: 900,
                bayes_factor: 77,
                bma: 88,
            },
        }
    }

    /// Rebase every seed onto `base` plus a stable per-stage offset, so an
    /// override changes all random streams while keeping them distinct.
    pub fn apply_seed_override(&mut self, base: u64) {
        for (name, offset) in SEED_OFFSETS {
            let v = base.wrapping_add(offset);
            match name {
                "surrogate" => self.seeds.surrogate = v,
                "experiments" => self.seeds.experiments = v,
                "split" => self.seeds.split = v,
                "iuq" => self.seeds.iuq = v,
                "bias" => self.seeds.bias = v,
                "chain" => self.seeds.chain = v,
                "bayes_factor" => self.seeds.bayes_factor = v,
                "bma" => self.seeds.bma = v,
                _ => unreachable!(),
            }
        }
    }

    /// Canonical serialized form; the basis of the config checksum.
    pub fn canonical_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn checksum(&self) -> Result<String> {
        let canon = self.canonical_toml()?;
        let mut h = Sha256::new();
        h.update(canon.as_bytes());
        Ok(format!("{:x}", h.finalize()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;


    #[test]
    fn demo_config_validates_and_round_trips() {
        let cfg = RunConfig::demo();
        cfg.validate().unwrap();
        let text = cfg.canonical_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.checksum().unwrap(), cfg.checksum().unwrap());
    }

    #[test]
    fn shipped_demo_file_matches_the_built_in_demo() {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../configs/demo.toml");
        let shipped = RunConfig::load(&path).unwrap();
        assert_eq!(
            shipped.checksum().unwrap(),
            RunConfig::demo().checksum().unwrap()
        );
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut text = RunConfig::demo().canonical_toml().unwrap();
        text.push_str("\nmystery_knob = 42\n");
        assert!(toml::from_str::<RunConfig>(&text).is_err());
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let mut cfg = RunConfig::demo();
        cfg.schema_version = 99;
        assert!(matches!(cfg.validate(), Err(CalvalError::Config(_))));
    }

    #[test]
    fn bad_values_are_rejected_with_config_errors() {
        let mut c = RunConfig::demo();
        c.generator.n_iuq = 3;
        assert!(c.validate().is_err());

        let mut c = RunConfig::demo();
        c.prior.initial = vec![9.0; 5];
        assert!(c.validate().is_err());

        let mut c = RunConfig::demo();
        c.mcmc.burn_in = c.mcmc.n_steps;
        assert!(c.validate().is_err());

        let mut c = RunConfig::demo();
        c.validation.aggregation = "median".into();
        assert!(c.validate().is_err());

        let mut c = RunConfig::demo();
        c.generator.iuq_ranges[2] = [8.0, 7.0];
        assert!(c.validate().is_err());

        let mut c = RunConfig::demo();
        c.dataset_label = "has space".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn seed_override_rebases_all_streams_distinctly() {
        let mut cfg = RunConfig::demo();
        cfg.apply_seed_override(10_000);
        let seeds = [
            cfg.seeds.surrogate,
            cfg.seeds.experiments,
            cfg.seeds.split,
            cfg.seeds.iuq,
            cfg.seeds.bias,
            cfg.seeds.chain,
            cfg.seeds.bayes_factor,
            cfg.seeds.bma,
        ];
        assert_eq!(seeds[0], 10_000);
        let mut uniq = seeds.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), seeds.len());
        // The chain stage consumes two consecutive seeds, so no other
        // stage may sit directly above it.
        assert!(!seeds.contains(&(cfg.seeds.chain + 1)));
    }

    #[test]
    fn checksum_tracks_content() {
        let a = RunConfig::demo();
        let mut b = RunConfig::demo();
        assert_eq!(a.checksum().unwrap(), b.checksum().unwrap());
        b.seeds.bma = 89;
        assert_ne!(a.checksum().unwrap(), b.checksum().unwrap());
    }
}
