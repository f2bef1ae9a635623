//! Run configuration: a strict JSON document mirroring the training
//! hyper-parameters plus a dataset source and output directory. Unknown
//! keys are rejected — a silently ignored typo in a hyper-parameter name is
//! the main reproducibility hazard.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use acmr_core::data::SyntheticSpec;
use acmr_core::trainer::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFiles {
    pub features: PathBuf,
    pub attributes: PathBuf,
    pub labels: PathBuf,
    pub split: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Files(DatasetFiles),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub dataset: DatasetSource,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("acmr-out"),
            dataset: DatasetSource::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Loads the config (or defaults) and applies command-line overrides.
    pub fn resolve(
        config: Option<&Path>,
        seed: Option<u64>,
        out: Option<&Path>,
    ) -> Result<Self, CliError> {
        let mut cfg = match config {
            Some(p) => RunConfig::from_path(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = seed {
            cfg.train.seed = seed;
        }
        if let Some(out) = out {
            cfg.out_dir = out.to_path_buf();
        }
        Ok(cfg)
    }

    /// Serializes the fully resolved config into the output directory so
    /// every run is reconstructible from its artifacts.
    pub fn write_echo(&self, out_dir: &Path) -> Result<PathBuf, CliError> {
        let path = out_dir.join("config_echo.json");
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Config(format!("config echo: {e}")))?;
        std::fs::write(&path, json + "\n")
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_the_reference_hyperparameters() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.train.epochs, 100);
        assert_eq!(cfg.train.batch_size_acmr, 50);
        assert_eq!(cfg.train.batch_size_classifier, 32);
        assert_eq!(cfg.train.lr_vae, 1.5e-4);
        assert_eq!(cfg.train.lr_iem, 3.3e-5);
        assert_eq!(cfg.train.lr_vsa, 7.4e-3);
        assert_eq!(cfg.train.lr_classifier, 0.5e-3);
        assert_eq!(cfg.train.latent_dim, 64);
        assert_eq!(cfg.train.enc_hidden_visual, 1560);
        assert_eq!(cfg.train.dec_hidden_visual, 1680);
        assert_eq!(cfg.train.enc_hidden_semantic, 1450);
        assert_eq!(cfg.train.dec_hidden_semantic, 665);
        assert_eq!(cfg.train.iem_hidden, 99);
        assert_eq!(cfg.train.unseen_samples_per_class, 200);
        match cfg.dataset {
            DatasetSource::Synthetic(s) => {
                assert_eq!((s.num_seen, s.num_unseen), (8, 4));
                assert_eq!((s.d_visual, s.d_attr), (64, 16));
                assert_eq!(s.samples_per_class, 50);
            }
            _ => panic!("default dataset should be synthetic"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"out_dir": "x", "trian": {}}"#;
        let err = serde_json::from_str::<RunConfig>(text).unwrap_err();
        assert!(err.to_string().contains("trian"));

        let nested = r#"{"train": {"epochs": 5, "learning_rate": 0.1}}"#;
        assert!(serde_json::from_str::<RunConfig>(nested).is_err());
    }

    #[test]
    fn echo_round_trips_to_an_equal_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.train.seed = 99;
        cfg.train.epochs = 3;
        let path = cfg.write_echo(dir.path()).unwrap();
        let parsed = RunConfig::from_path(&path).unwrap();
        assert_eq!(parsed, cfg);
    }
}
