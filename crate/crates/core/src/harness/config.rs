use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::federation::FedConfig;
use crate::fisher::FimConfig;
use crate::schedules::{DataSchedule, ParticipationSchedule};

/// Where training and test data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian mixture; the first `n_train` generated examples train, the
    /// next `n_test` test (same class means).
    Synthetic {
        classes: usize,
        dim: usize,
        n_train: usize,
        n_test: usize,
        spread: f64,
        seed: u64,
    },
    /// CSV files; relative paths resolve against the config file's directory.
    Csv { train: PathBuf, test: PathBuf },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::Synthetic {
                classes,
                dim,
                n_train,
                n_test,
                spread,
                seed,
            } => {
                if *n_test == 0 {
                    return Err(Error::config("n_test must be at least 1"));
                }
                let all = data::generate_synthetic(*classes, *dim, n_train + n_test, *spread, *seed)?;
                all.split_at(*n_train)
            }
            DatasetSpec::Csv { train, test } => {
                let train = data::load_dataset(train)?;
                let test = data::load_dataset(test)?;
                if train.dim() != test.dim() {
                    return Err(Error::config(format!(
                        "training data has {} features, test data {}",
                        train.dim(),
                        test.dim()
                    )));
                }
                Ok((train, test))
            }
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let DatasetSpec::Csv { train, test } = self {
            for p in [train, test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

/// How training data is split across clients.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PartitionSpec {
    #[default]
    Iid,
    Shards { shards_per_client: usize },
}

fn default_target_fraction() -> f64 {
    0.99
}

fn default_critical_fraction() -> f64 {
    0.1
}

/// A complete run description, read from one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub federation: FedConfig,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub partition: PartitionSpec,
    #[serde(default)]
    pub data_schedule: DataSchedule,
    #[serde(default)]
    pub participation: ParticipationSchedule,
    #[serde(default)]
    pub fisher: FimConfig,
    /// Absolute accuracy target for `rounds_to_target`. When absent the target
    /// is `target_fraction` times the run's own final accuracy.
    #[serde(default)]
    pub target_accuracy: Option<f64>,
    #[serde(default = "default_target_fraction")]
    pub target_fraction: f64,
    /// Threshold for the advisory critical-period detector.
    #[serde(default = "default_critical_fraction")]
    pub critical_fraction: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates a config file, resolving relative dataset paths
    /// against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            config.dataset.resolve_paths(dir);
        }
        Ok(config)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every cross-module invariant that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        let fed = &self.federation;
        fed.validate()?;
        self.data_schedule.validate()?;
        self.participation.validate(fed.n_clients, fed.clients_per_round)?;
        self.fisher.validate()?;
        if let Some(target) = self.target_accuracy {
            if !(0.0..=1.0).contains(&target) {
                return Err(Error::config(format!("target_accuracy must lie in [0, 1], got {target}")));
            }
        }
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(Error::config(format!(
                "target_fraction must lie in (0, 1], got {}",
                self.target_fraction
            )));
        }
        if !(self.critical_fraction > 0.0 && self.critical_fraction < 1.0) {
            return Err(Error::config(format!(
                "critical_fraction must lie in (0, 1), got {}",
                self.critical_fraction
            )));
        }
        if let DatasetSpec::Synthetic {
            classes, dim, n_train, n_test, ..
        } = &self.dataset
        {
            if *dim != fed.arch[0] || classes != fed.arch.last().unwrap() {
                return Err(Error::config(format!(
                    "synthetic data ({dim} features, {classes} classes) does not match architecture {:?}",
                    fed.arch
                )));
            }
            if *n_train < fed.n_clients {
                return Err(Error::config(format!(
                    "{n_train} training examples cannot cover {} clients",
                    fed.n_clients
                )));
            }
            if *n_test == 0 {
                return Err(Error::config("n_test must be at least 1"));
            }
        }
        if let PartitionSpec::Shards { shards_per_client } = self.partition {
            if shards_per_client == 0 || shards_per_client > *fed.arch.last().unwrap() {
                return Err(Error::config(format!(
                    "shards_per_client must be in 1..={}, got {shards_per_client}",
                    fed.arch.last().unwrap()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "federation": {
            "n_clients": 4, "clients_per_round": 2, "local_steps": 2, "batch_size": 4,
            "lr0": 0.05, "lr_decay": 0.99, "rounds": 3, "master_seed": 1, "arch": [2, 4, 2]
        },
        "dataset": {"kind": "synthetic", "classes": 2, "dim": 2, "n_train": 40, "n_test": 10, "spread": 0.5, "seed": 3}
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.partition, PartitionSpec::Iid);
        assert_eq!(c.data_schedule, DataSchedule::full());
        assert_eq!(c.fisher, FimConfig::default());
        assert_eq!(c.federation.threads, 1);
        assert_eq!(c.target_fraction, 0.99);
        let again = ExperimentConfig::from_json(&c.to_json_pretty()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let extra = MINIMAL.replacen("\"federation\"", "\"bogus\": 1, \"federation\"", 1);
        assert!(matches!(ExperimentConfig::from_json(&extra), Err(Error::Config(_))));
        let nested = MINIMAL.replacen("\"rounds\": 3", "\"rounds\": 3, \"epochs\": 2", 1);
        assert!(matches!(ExperimentConfig::from_json(&nested), Err(Error::Config(_))));
        let in_dataset = MINIMAL.replacen("\"seed\": 3", "\"seed\": 3, \"noise\": 1", 1);
        assert!(matches!(ExperimentConfig::from_json(&in_dataset), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_are_rejected() {
        for (from, to) in [
            ("\"clients_per_round\": 2", "\"clients_per_round\": 5"),
            ("\"lr0\": 0.05", "\"lr0\": 0.0"),
            ("\"lr_decay\": 0.99", "\"lr_decay\": 1.5"),
            ("\"arch\": [2, 4, 2]", "\"arch\": [3, 4, 2]"),
            ("\"rounds\": 3", "\"rounds\": 0"),
        ] {
            let bad = MINIMAL.replacen(from, to, 1);
            assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::Config(_))), "{to}");
        }
    }
}
