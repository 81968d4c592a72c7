//! Pipeline orchestration: staged execution into an output directory with
//! a run manifest, artifact checksums, dependency enforcement, and an
//! exclusive directory lock.

pub mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CalvalError, Result};

/// Tool version stamped into manifests.
pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Which discrepancy treatment the calibration stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BiasMode {
    Off,
    On,
    #[default]
    Both,
}

impl BiasMode {
    pub fn includes_off(self) -> bool {
        matches!(self, BiasMode::Off | BiasMode::Both)
    }

    pub fn includes_on(self) -> bool {
        matches!(self, BiasMode::On | BiasMode::Both)
    }

    /// Mode labels covered, in canonical order.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            BiasMode::Off => &["off"],
            BiasMode::On => &["on"],
            BiasMode::Both => &["off", "on"],
        }
    }
}

impl fmt::Display for BiasMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BiasMode::Off => "off",
            BiasMode::On => "on",
            BiasMode::Both => "both",
        })
    }
}

impl FromStr for BiasMode {
    type Err = CalvalError;

    fn from_str(s: &str) -> Result<BiasMode> {
        match s {
            "off" => Ok(BiasMode::Off),
            "on" => Ok(BiasMode::On),
            "both" => Ok(BiasMode::Both),
            other => Err(CalvalError::invalid(format!(
                "bias mode must be one of off, on, both; got '{other}'"
            ))),
        }
    }
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Generate,
    Surrogate,
    Iuq,
    Validate,
    Predict,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Generate,
        Stage::Surrogate,
        Stage::Iuq,
        Stage::Validate,
        Stage::Predict,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Surrogate => "surrogate",
            Stage::Iuq => "iuq",
            Stage::Validate => "validate",
            Stage::Predict => "predict",
            Stage::Report => "report",
        }
    }

    /// Stages that must have completed before this one may run.
    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Generate => &[],
            Stage::Surrogate => &[],
            Stage::Iuq => &[Stage::Generate, Stage::Surrogate],
            Stage::Validate => &[Stage::Iuq],
            Stage::Predict => &[Stage::Validate],
            Stage::Report => &[Stage::Validate, Stage::Predict],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = CalvalError;

    fn from_str(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| CalvalError::invalid(format!("unknown stage '{s}'")))
    }
}

/// Artifacts produced by one stage: relative path to SHA-256 hex digest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StageRecord {
    pub artifacts: BTreeMap<String, String>,
}

/// Persistent record of a run directory. Contains no timestamps so that
/// repeated runs of the same configuration produce identical manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Checksum of the effective configuration the directory was
    /// initialized with.
    pub config_checksum: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn new(config_checksum: String) -> RunManifest {
        RunManifest {
            tool_version: PIPELINE_VERSION.to_string(),
            config_checksum,
            stages: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn has_stage(&self, stage: Stage) -> bool {
        self.stages.contains_key(stage.name())
    }

    /// Merge newly produced artifacts into the stage's record, keeping
    /// entries from earlier invocations (a stage rerun in a different
    /// bias mode adds artifacts rather than forgetting the other mode's).
    pub fn record_stage(&mut self, stage: Stage, artifacts: BTreeMap<String, String>) {
        self.stages
            .entry(stage.name().to_string())
            .or_default()
            .artifacts
            .extend(artifacts);
    }

    fn ensure_deps(&self, stage: Stage) -> Result<()> {
        for dep in stage.deps() {
            if !self.has_stage(*dep) {
                return Err(CalvalError::MissingStage {
                    stage: stage.name().to_string(),
                    missing: dep.name().to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Exclusive lock on an output directory, released on drop.
#[derive(Debug)]
pub struct OutDirLock {
    path: PathBuf,
}

impl OutDirLock {
    pub fn acquire(dir: &Path) -> Result<OutDirLock> {
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutDirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CalvalError::LockHeld(format!(
                    "{} is locked by another run; remove {} if that run is dead",
                    dir.display(),
                    path.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutDirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn checksum_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

/// An opened run directory: validated configuration, manifest, and the
/// directory lock. All stage execution goes through [`Pipeline::run`].
pub struct Pipeline {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub bias_mode: BiasMode,
    manifest: RunManifest,
    _lock: OutDirLock,
}

impl Pipeline {
    /// Open (or initialize) `out` for runs of `cfg`.
    ///
    /// A fresh directory is stamped with the effective configuration and
    /// an empty manifest. An existing directory must have been initialized
    /// with a configuration of identical checksum; anything else is an
    /// error, because mixing configurations in one directory silently
    /// corrupts provenance.
    pub fn open(cfg: RunConfig, out: &Path, bias_mode: BiasMode) -> Result<Pipeline> {
        cfg.validate()?;
        fs::create_dir_all(out)?;
        let lock = OutDirLock::acquire(out)?;
        let checksum = cfg.checksum()?;
        let manifest_path = out.join("manifest.json");
        let manifest = if manifest_path.exists() {
            let m = RunManifest::load(&manifest_path)?;
            if m.config_checksum != checksum {
                return Err(CalvalError::Config(format!(
                    "{} was initialized with a different configuration \
                     (manifest checksum {}, this config {}); use a fresh out directory",
                    out.display(),
                    m.config_checksum,
                    checksum
                )));
            }
            m
        } else {
            fs::write(out.join("config_effective.toml"), cfg.canonical_toml()?)?;
            let m = RunManifest::new(checksum);
            m.save(&manifest_path)?;
            m
        };
        Ok(Pipeline {
            cfg,
            out: out.to_path_buf(),
            bias_mode,
            manifest,
            _lock: lock,
        })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Run one stage: dependencies are enforced against the manifest, the
    /// stage executes, and its artifacts are checksummed and recorded.
    pub fn run(&mut self, stage: Stage) -> Result<()> {
        self.manifest.ensure_deps(stage)?;
        log::info!("stage {stage}: starting (bias mode {})", self.bias_mode);
        let artifacts = match stage {
            Stage::Generate => stages::stage_generate(&self.cfg, &self.out)?,
            Stage::Surrogate => stages::stage_surrogate(&self.cfg, &self.out)?,
            Stage::Iuq => stages::stage_iuq(&self.cfg, &self.out, self.bias_mode)?,
            Stage::Validate => stages::stage_validate(&self.cfg, &self.out, self.bias_mode)?,
            Stage::Predict => stages::stage_predict(&self.cfg, &self.out, self.bias_mode)?,
            Stage::Report => stages::stage_report(&self.cfg, &self.out)?,
        };
        let mut checksums = BTreeMap::new();
        for name in &artifacts {
            checksums.insert(name.clone(), checksum_file(&self.out.join(name))?);
        }
        self.manifest.record_stage(stage, checksums);
        self.manifest.save(&self.out.join("manifest.json"))?;
        log::info!("stage {stage}: done ({} artifacts)", artifacts.len());
        Ok(())
    }

    /// Run every stage in order.
    pub fn run_all(&mut self) -> Result<()> {
        for stage in Stage::ALL {
            self.run(stage)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_order_and_deps_are_frozen() {
        assert_eq!(Stage::Generate.deps(), &[] as &[Stage]);
        assert_eq!(Stage::Surrogate.deps(), &[] as &[Stage]);
        assert_eq!(Stage::Iuq.deps(), &[Stage::Generate, Stage::Surrogate]);
        assert_eq!(Stage::Validate.deps(), &[Stage::Iuq]);
        assert_eq!(Stage::Predict.deps(), &[Stage::Validate]);
        assert_eq!(Stage::Report.deps(), &[Stage::Validate, Stage::Predict]);
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(Stage::from_str(s.name()).unwrap(), s);
        }
        assert!(Stage::from_str("deploy").is_err());
    }

    #[test]
    fn bias_mode_parsing() {
        assert_eq!(BiasMode::from_str("both").unwrap(), BiasMode::Both);
        assert_eq!(BiasMode::Off.labels(), &["off"]);
        assert_eq!(BiasMode::Both.labels(), &["off", "on"]);
        assert!(BiasMode::from_str("maybe").is_err());
    }

    #[test]
    fn missing_dependency_names_the_missing_stage() {
        let m = RunManifest::new("abc".into());
        let err = m.ensure_deps(Stage::Validate).unwrap_err();
        match err {
            CalvalError::MissingStage { stage, missing } => {
                assert_eq!(stage, "validate");
                assert_eq!(missing, "iuq");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn lock_excludes_second_holder_and_releases_on_drop() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutDirLock::acquire(dir.path()).unwrap();
        assert!(matches!(
            OutDirLock::acquire(dir.path()),
            Err(CalvalError::LockHeld(_))
        ));
        drop(lock);
        OutDirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn manifest_merges_stage_artifacts() {
        let mut m = RunManifest::new("c".into());
        let mut a1 = BTreeMap::new();
        a1.insert("chain_off.csv".to_string(), "h1".to_string());
        m.record_stage(Stage::Iuq, a1);
        let mut a2 = BTreeMap::new();
        a2.insert("chain_on.csv".to_string(), "h2".to_string());
        m.record_stage(Stage::Iuq, a2);
        let rec = &m.stages["iuq"];
        assert_eq!(rec.artifacts.len(), 2);
        assert_eq!(rec.artifacts["chain_off.csv"], "h1");
    }

    #[test]
    fn manifest_round_trips_without_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("sum".into());
        m.record_stage(Stage::Generate, BTreeMap::new());
        let p = dir.path().join("manifest.json");
        m.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(!text.to_lowercase().contains("time"));
        let back = RunManifest::load(&p).unwrap();
        assert_eq!(back.config_checksum, "sum");
        assert!(back.has_stage(Stage::Generate));
    }
}
