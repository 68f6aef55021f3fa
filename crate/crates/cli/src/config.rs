//! Run configuration loaded from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lipt_core::cohort::CohortConfig;
use lipt_core::fnn::FnnConfig;
use lipt_core::pse::PseConfig;
use lipt_core::trajectory::Mapping;
use serde::{Deserialize, Serialize};

use crate::store::TaskTag;
use crate::Validation;

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub theta: f64,
    pub phi1: f64,
    pub phi0: f64,
    /// Fit `θ, φ` against visit states before reporting.
    pub calibrate: bool,
    pub loss: String,
    pub rank: bool,
    /// Fractional Bradley-Terry wins.
    pub soft: bool,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        let m = Mapping::default();
        Self {
            theta: 0.0,
            phi1: m.phi1,
            phi0: m.phi0,
            calibrate: false,
            loss: "bce".into(),
            rank: true,
            soft: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub pre: Option<PathBuf>,
    pub post: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the seeds of every section.
    pub seed: u64,
    pub alpha: f64,
    pub comparator: String,
    /// Training repeats with seeds `seed, seed+1, …`.
    pub repeats: usize,
    pub task: Option<TaskTag>,
    pub train_fraction: f64,
    pub paths: PathsConfig,
    pub pse: PseConfig,
    pub fnn: FnnConfig,
    pub cohort: CohortConfig,
    pub trajectory: TrajectoryConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            alpha: 0.05,
            comparator: "pse".into(),
            repeats: 5,
            task: None,
            train_fraction: 0.8,
            paths: PathsConfig::default(),
            pse: PseConfig::default(),
            fnn: FnnConfig::default(),
            cohort: CohortConfig::default(),
            trajectory: TrajectoryConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).map_err(|e| Validation(format!("config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.pse.seed = cfg.seed;
        cfg.fnn.seed = cfg.seed;
        cfg.cohort.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Validation(m).into());
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if self.repeats == 0 {
            return bad("repeats must be positive".into());
        }
        if !(self.trajectory.theta >= 0.0) {
            return bad("trajectory.theta must be non-negative".into());
        }
        self.pse.validate()?;
        self.cohort.validate()?;
        Ok(())
    }

    pub fn mapping(&self) -> Mapping {
        Mapping { phi1: self.trajectory.phi1, phi0: self.trajectory.phi0 }
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(RESOLVED_CONFIG), toml::to_string(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_str(text: &str, seed: Option<u64>) -> Result<RunConfig> {
        let dir = tempfile::tempdir()?;
        let p = dir.path().join("c.toml");
        fs::write(&p, text)?;
        RunConfig::load(Some(&p), seed)
    }

    #[test]
    fn seed_propagates_and_override_wins() {
        let cfg = load_str("seed = 4\n", Some(9)).unwrap();
        assert_eq!((cfg.seed, cfg.pse.seed, cfg.fnn.seed, cfg.cohort.seed), (9, 9, 9, 9));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_validation_errors() {
        for text in ["colour = 1\n", "[pse]\nlatnt_dim = 3\n", "alpha = 1.5\n", "repeats = 0\n", "[trajectory]\ntheta = -1.0\n"] {
            let err = load_str(text, None).unwrap_err();
            assert!(err.downcast_ref::<Validation>().is_some() || err.downcast_ref::<lipt_core::CoreError>().is_some(), "{text}: {err}");
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = load_str("seed = 2\nalpha = 0.01\n[pse]\nhidden = 7\n", None).unwrap();
        cfg.write_resolved(dir.path()).unwrap();
        let again = RunConfig::load(Some(&dir.path().join(RESOLVED_CONFIG)), None).unwrap();
        assert_eq!(toml::to_string(&again).unwrap(), toml::to_string(&cfg).unwrap());
    }
}
