use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::QueueSpec;
use crate::error::{Error, Result};

/// Experiment description, read from TOML (flat sections) or JSON.
///
/// ```toml
/// [environment]
/// kind = "queue"
/// buffer = 5
/// service_actions = [0.2, 0.4, 0.6, 0.8]
/// flow_actions = [0.5, 0.6, 0.7, 0.8]
///
/// [learner]
/// k = "default"
/// horizon = 100000
/// seed_count = 10
///
/// [output]
/// directory = "out/queue"
/// stride = 100
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentConfig,
    pub learner: LearnerSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub metrics: MetricSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentConfig {
    Queue {
        #[serde(default = "default_buffer")]
        buffer: usize,
        #[serde(default = "default_service")]
        service_actions: Vec<f64>,
        #[serde(default = "default_flow")]
        flow_actions: Vec<f64>,
    },
    Random {
        n_states: usize,
        n_actions: usize,
        d: usize,
        seed: u64,
        min_prob: f64,
    },
    File {
        path: PathBuf,
    },
}

fn default_buffer() -> usize {
    QueueSpec::default().buffer
}

fn default_service() -> Vec<f64> {
    QueueSpec::default().service_actions
}

fn default_flow() -> Vec<f64> {
    QueueSpec::default().flow_actions
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig::Queue {
            buffer: default_buffer(),
            service_actions: default_service(),
            flow_actions: default_flow(),
        }
    }
}

/// Conservatism constant: a number, or `"default"` for the mixing-time heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KSetting {
    Value(f64),
    Named(DefaultK),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefaultK {
    Default,
}

impl Default for KSetting {
    fn default() -> Self {
        KSetting::Named(DefaultK::Default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    #[serde(default)]
    pub k: KSetting,
    pub horizon: u64,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    /// Shorthand for seeds `0..seed_count`.
    #[serde(default)]
    pub seed_count: Option<u64>,
    #[serde(default)]
    pub update_every_step: bool,
    #[serde(default)]
    pub t_lower: Option<f64>,
    #[serde(default)]
    pub epsilon_cap: Option<f64>,
    #[serde(default)]
    pub initial_state: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_stride")]
    pub stride: u64,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

fn default_stride() -> u64 {
    100
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { directory: default_directory(), stride: default_stride() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSection {
    /// Bypass the in-process oracle cache.
    #[serde(default)]
    pub recompute_oracle: bool,
}

impl ExperimentConfig {
    /// Parses JSON when the text starts with `{`, TOML otherwise.
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    /// Loads a config file; relative model paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        if let EnvironmentConfig::File { path: model } = &mut config.environment {
            if model.is_relative() {
                if let Some(dir) = path.parent() {
                    *model = dir.join(&*model);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.learner.horizon < 1 {
            return Err(Error::Config("learner.horizon must be at least 1".into()));
        }
        if self.output.stride < 1 {
            return Err(Error::Config("output.stride must be at least 1".into()));
        }
        if let KSetting::Value(k) = self.learner.k {
            if !(k.is_finite() && k >= 0.0) {
                return Err(Error::Config(format!("learner.k must be finite and >= 0, got {k}")));
            }
        }
        self.seeds().map(|_| ())
    }

    /// Resolved seed list.
    pub fn seeds(&self) -> Result<Vec<u64>> {
        let seeds = match (&self.learner.seeds, self.learner.seed_count) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either learner.seeds or learner.seed_count, not both".into()))
            }
            (Some(list), None) => list.clone(),
            (None, Some(n)) => (0..n).collect(),
            (None, None) => vec![0],
        };
        if seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(seeds)
    }

    pub fn with_seed_count(mut self, n: u64) -> Result<Self> {
        self.learner.seeds = None;
        self.learner.seed_count = Some(n);
        self.validate()?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let toml_text = r#"
            [environment]
            kind = "queue"

            [learner]
            k = 2.5
            horizon = 1000
            seeds = [3, 4]

            [output]
            directory = "runs"
            stride = 10
        "#;
        let json_text = r#"{
            "environment": {"kind": "queue"},
            "learner": {"k": 2.5, "horizon": 1000, "seeds": [3, 4]},
            "output": {"directory": "runs", "stride": 10}
        }"#;
        let a = ExperimentConfig::parse(toml_text).unwrap();
        let b = ExperimentConfig::parse(json_text).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seeds().unwrap(), vec![3, 4]);
        assert_eq!(a.environment, EnvironmentConfig::default());
    }

    #[test]
    fn default_k_keyword() {
        let c = ExperimentConfig::parse("[environment]\nkind = \"queue\"\n[learner]\nk = \"default\"\nhorizon = 5\n")
            .unwrap();
        assert_eq!(c.learner.k, KSetting::Named(DefaultK::Default));
        assert_eq!(c.seeds().unwrap(), vec![0]);
    }

    #[test]
    fn empty_seed_list_rejected() {
        let err = ExperimentConfig::parse("[environment]\nkind = \"queue\"\n[learner]\nhorizon = 5\nseeds = []\n");
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn zero_stride_and_horizon_rejected() {
        assert!(ExperimentConfig::parse("[environment]\nkind = \"queue\"\n[learner]\nhorizon = 0\n").is_err());
        assert!(ExperimentConfig::parse(
            "[environment]\nkind = \"queue\"\n[learner]\nhorizon = 3\n[output]\nstride = 0\n"
        )
        .is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::parse("[environment]\nkind = \"queue\"\n[learner]\nhorizon = 3\nfoo = 1\n").is_err());
    }
}
