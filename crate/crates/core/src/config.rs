//! Scenario configuration. TOML on disk, JSON inside run manifests.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{AttackConfig, AttackKind};
use crate::learning::{TaskSpec, TrainConfig};
use crate::topology::{malicious_count, TopologyKind};
use crate::voyager::VoyagerConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Fedavg,
    Krum,
    TrimmedMean,
    Median,
    Fltrust,
    Voyager,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 6] = [
        AggregatorKind::Fedavg,
        AggregatorKind::Krum,
        AggregatorKind::TrimmedMean,
        AggregatorKind::Median,
        AggregatorKind::Fltrust,
        AggregatorKind::Voyager,
    ];
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregatorKind::Fedavg => "fedavg",
            AggregatorKind::Krum => "krum",
            AggregatorKind::TrimmedMean => "trimmed_mean",
            AggregatorKind::Median => "median",
            AggregatorKind::Fltrust => "fltrust",
            AggregatorKind::Voyager => "voyager",
        })
    }
}

impl FromStr for AggregatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| format!("unknown aggregator '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationParams {
    /// Fraction trimmed from each end by `trimmed_mean`.
    pub trim_fraction: f64,
    /// Attacker share assumed by Krum's `f` and by the neighbor target.
    /// Defaults to the configured attack share.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assumed_alpha: Option<f64>,
}

impl Default for AggregationParams {
    fn default() -> Self {
        Self {
            trim_fraction: 0.2,
            assumed_alpha: None,
        }
    }
}

fn default_nodes() -> usize {
    10
}

fn default_rounds() -> usize {
    10
}

fn default_random_p() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub aggregator: AggregatorKind,
    pub topology: TopologyKind,
    /// Edge probability for `random` topologies.
    #[serde(default = "default_random_p")]
    pub random_p: f64,
    #[serde(default = "default_nodes")]
    pub n_nodes: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub task: TaskSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub voyager: VoyagerConfig,
    #[serde(default)]
    pub aggregation: AggregationParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    /// Defaults for everything except the three required keys.
    pub fn new(seed: u64, aggregator: AggregatorKind, topology: TopologyKind) -> Self {
        Self {
            seed,
            aggregator,
            topology,
            random_p: default_random_p(),
            n_nodes: default_nodes(),
            rounds: default_rounds(),
            task: TaskSpec::default(),
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
            voyager: VoyagerConfig::default(),
            aggregation: AggregationParams::default(),
            output_dir: None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Attacker share used for `f` and the neighbor target.
    pub fn assumed_alpha(&self) -> f64 {
        self.aggregation
            .assumed_alpha
            .unwrap_or_else(|| self.attack.effective_alpha())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_nodes < 3 {
            return Err(ConfigError::invalid("n_nodes", "need at least 3 nodes"));
        }
        if self.rounds == 0 {
            return Err(ConfigError::invalid("rounds", "must be >= 1"));
        }
        if self.topology == TopologyKind::Random && !(self.random_p > 0.0 && self.random_p <= 1.0) {
            return Err(ConfigError::invalid("random_p", "must be in (0, 1]"));
        }
        self.task
            .validate()
            .map_err(|e| ConfigError::invalid("task", e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| ConfigError::invalid("train", e.to_string()))?;
        self.attack
            .validate()
            .map_err(|e| ConfigError::invalid("attack", e))?;
        if let Some(p) = self.attack.protected_node {
            if p >= self.n_nodes {
                return Err(ConfigError::invalid(
                    "attack.protected_node",
                    "not a node id",
                ));
            }
        }
        if self.attack.kind != AttackKind::None
            && self.attack.pnr_percent == 100
            && self.attack.protected_node.is_none()
        {
            return Err(ConfigError::invalid(
                "attack.pnr_percent",
                "leaves no benign node",
            ));
        }
        self.voyager
            .validate()
            .map_err(|e| ConfigError::invalid("voyager", e))?;
        if !(0.0..0.5).contains(&self.aggregation.trim_fraction) {
            return Err(ConfigError::invalid(
                "aggregation.trim_fraction",
                "must be in [0, 0.5)",
            ));
        }
        let alpha = self.assumed_alpha();
        if malicious_count(self.n_nodes, alpha).is_err() {
            return Err(ConfigError::invalid(
                "aggregation.assumed_alpha",
                format!(
                    "{alpha} is not a usable attacker share for {} nodes",
                    self.n_nodes
                ),
            ));
        }
        let examples = self.task.samples_per_class * self.task.num_classes;
        if examples < 2 * self.n_nodes {
            return Err(ConfigError::invalid(
                "task.samples_per_class",
                format!("{examples} examples cannot feed {} nodes", self.n_nodes),
            ));
        }
        Ok(())
    }
}
