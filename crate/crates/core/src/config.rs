//! Single-file JSON run configuration shared by every CLI command.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{CoreError, Result};
use crate::heads::HeadKind;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

fn default_fractions() -> (f64, f64, f64) {
    (0.8, 0.1, 0.1)
}

fn default_per_class() -> usize {
    100
}

fn default_grid() -> usize {
    64
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub report_dir: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epoch cap; per-head defaults (400 Bi-LSTM, 760 transformer) when
    /// omitted.
    #[serde(default)]
    pub max_iterations: Option<usize>,
    pub convergence_eps: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExportParams {
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_grid")]
    pub grid: usize,
}

impl Default for ExportParams {
    fn default() -> Self {
        ExportParams { per_class: default_per_class(), grid: default_grid() }
    }
}

/// Everything a run needs: paths, generator spec, architecture choice and
/// training parameters. The master `seed` drives training, splitting and
/// export subsampling; the generator keeps its own seed so a dataset's
/// identity does not change when a model is retrained.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub dataset: SyntheticSpec,
    pub head: HeadKind,
    pub train: TrainParams,
    #[serde(default = "default_fractions")]
    pub split_fractions: (f64, f64, f64),
    #[serde(default)]
    pub export: ExportParams,
}

impl RunConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let config: RunConfig =
            serde_json::from_str(json).map_err(|e| CoreError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model_config().validate()?;
        self.train_config().validate()?;
        if self.export.grid < 2 {
            return Err(CoreError::Config("export.grid must be at least 2".into()));
        }
        Ok(())
    }

    /// Paper-scale architecture for the configured head and class count.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::paper(self.head, self.dataset.n_classes as usize)
    }

    pub fn train_config(&self) -> TrainConfig {
        let defaults = TrainConfig::defaults(self.head, self.dataset.n_classes as usize);
        TrainConfig {
            head: self.head,
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            max_iterations: self.train.max_iterations.unwrap_or(defaults.max_iterations),
            convergence_eps: self.train.convergence_eps,
            seed: self.seed,
            n_classes: self.dataset.n_classes as usize,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_json() -> String {
        let spec = SyntheticSpec::disjoint(4, 20, 2, 0.8, 99).unwrap();
        let config = RunConfig {
            seed: 7,
            paths: Paths {
                dataset: "data.eegb".into(),
                checkpoint: "model.ndmd".into(),
                report_dir: "reports".into(),
            },
            dataset: spec,
            head: HeadKind::Bilstm,
            train: TrainParams {
                learning_rate: 1e-3,
                batch_size: 64,
                max_iterations: Some(20),
                convergence_eps: 1e-4,
            },
            split_fractions: (0.8, 0.1, 0.1),
            export: ExportParams::default(),
        };
        serde_json::to_string_pretty(&config).unwrap()
    }

    #[test]
    fn round_trips_and_validates() {
        let json = sample_json();
        let config = RunConfig::from_json(&json).unwrap();
        assert_eq!(config.head, HeadKind::Bilstm);
        assert_eq!(config.train_config().max_iterations, 20);
        assert_eq!(config.train_config().seed, 7);
    }

    #[test]
    fn missing_field_error_names_the_field() {
        let json = sample_json().replace("\"seed\": 7,", "");
        let err = RunConfig::from_json(&json).unwrap_err();
        assert!(err.to_string().contains("seed"), "error was: {err}");
    }

    #[test]
    fn unknown_field_rejected() {
        let json = sample_json().replacen('{', "{\n  \"typo_field\": 1,", 1);
        assert!(RunConfig::from_json(&json).is_err());
    }

    #[test]
    fn head_defaults_differ() {
        let json = sample_json();
        let mut config = RunConfig::from_json(&json).unwrap();
        config.train.max_iterations = None;
        assert_eq!(config.train_config().max_iterations, 400);
        config.head = HeadKind::Transformer;
        assert_eq!(config.train_config().max_iterations, 760);
    }
}
