//! TOML run configuration.
//!
//! A config file may set any subset of the keys of [`RunConfig`]; every
//! other key keeps its default. Unknown keys are rejected. The resolved
//! configuration (without output-only settings) is hashed to name the run
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use augrec_core::experiment::ExperimentConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

/// Environment variable naming the directory that holds run directories.
pub const RUNS_ENV: &str = "AUGREC_RUNS";
pub const DEFAULT_RUNS_ROOT: &str = "runs";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Write an intermediate fine-tuning checkpoint every this many steps
    /// (0 disables).
    pub checkpoint_every: usize,
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
}

/// Command-line values that mirror config keys.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub mix_ratio: Option<f64>,
}

fn merge(base: &mut toml::Value, user: toml::Value, at: &str) -> Result<()> {
    match (base, user) {
        (toml::Value::Table(b), toml::Value::Table(u)) => {
            for (k, v) in u {
                let key = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &key)?,
                    None => return Err(AppError::Config(format!("unknown key `{key}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            if let (toml::Value::Table(_), _) | (_, toml::Value::Table(_)) = (&*slot, &v) {
                return Err(AppError::Config(format!("`{at}` has the wrong type")));
            }
            *slot = v;
            Ok(())
        }
    }
}

impl RunConfig {
    /// Parses TOML text on top of the defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Value = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        let mut base = toml::Value::try_from(Self::default()).expect("defaults serialize");
        merge(&mut base, user, "")?;
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| AppError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(AppError::io(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment
            .validate()
            .map_err(|e| AppError::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        let ft = &mut self.experiment.finetune;
        if let Some(v) = o.beta {
            ft.hp.beta = v;
        }
        if let Some(v) = o.gamma {
            ft.hp.gamma = v;
        }
        if let Some(v) = o.lambda {
            ft.hp.lambda_ = v;
        }
        if let Some(v) = o.mix_ratio {
            ft.mix_ratio = v;
        }
        self.validate()
    }

    /// First 12 hex digits of SHA-256 over the canonical JSON of the
    /// experiment settings.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.experiment).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_RUNS_ROOT))
}

pub fn run_dir_name(cfg: &RunConfig, seed: u64) -> String {
    format!("{}-s{seed}", cfg.hash())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections_merge_and_unknown_keys_fail() {
        let cfg = RunConfig::from_toml("[finetune]\nsteps = 10\n[finetune.hp]\nlambda = 5.0\n").unwrap();
        assert_eq!(cfg.experiment.finetune.steps, 10);
        assert_eq!(cfg.experiment.finetune.hp.lambda_, 5.0);
        assert_eq!(cfg.experiment.finetune.batch_size, 32);
        let err = RunConfig::from_toml("[finetune]\nstepz = 10\n").unwrap_err();
        assert!(err.to_string().contains("finetune.stepz"), "{err}");
        assert!(RunConfig::from_toml("rho = \"high\"").is_err());
    }

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn hash_tracks_experiment_settings_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.checkpoint_every = 50;
        assert_eq!(a.hash(), b.hash());
        b.apply(&Overrides {
            beta: Some(0.1),
            ..Overrides::default()
        })
        .unwrap();
        assert_ne!(a.hash(), b.hash());
    }
}
