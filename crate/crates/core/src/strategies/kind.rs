use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::routing::RoutingOptions;
use crate::nn::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Baseline,
    FeatureClustered,
    LossFullySeparated,
    LossFinalLayerSeparated,
    IdEmbedding,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Baseline,
        StrategyKind::FeatureClustered,
        StrategyKind::LossFullySeparated,
        StrategyKind::LossFinalLayerSeparated,
        StrategyKind::IdEmbedding,
    ];

    pub fn is_routed(self) -> bool {
        matches!(self, StrategyKind::FeatureClustered | StrategyKind::LossFullySeparated | StrategyKind::LossFinalLayerSeparated)
    }

    pub fn routes_by_loss(self) -> bool {
        matches!(self, StrategyKind::LossFullySeparated | StrategyKind::LossFinalLayerSeparated)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Baseline => "baseline",
            StrategyKind::FeatureClustered => "feature-clustered",
            StrategyKind::LossFullySeparated => "loss-fully-separated",
            StrategyKind::LossFinalLayerSeparated => "loss-final-layer-separated",
            StrategyKind::IdEmbedding => "id-embedding",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown strategy kind {s:?}")))
    }
}

/// Number of clusters: fixed, or chosen from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum KChoice {
    #[default]
    Auto,
    Fixed(usize),
}

impl fmt::Display for KChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KChoice::Auto => f.write_str("auto"),
            KChoice::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for KChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(KChoice::Auto);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(KChoice::Fixed(k)),
            _ => Err(Error::Validation(format!("k must be `auto` or a positive integer, got {s:?}"))),
        }
    }
}

impl TryFrom<String> for KChoice {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<KChoice> for String {
    fn from(k: KChoice) -> String {
        k.to_string()
    }
}

/// Everything needed to fit one strategy: kind, k, training and routing settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    /// Display name used in reports.
    pub name: String,
    pub kind: StrategyKind,
    pub k: KChoice,
    pub train: TrainConfig,
    #[serde(default)]
    pub routing: RoutingOptions,
}

/// Short names accepted on the command line.
pub const PRESET_NAMES: [&str; 6] = ["baseline", "feature2", "feature4", "loss-full", "loss-final", "id-embed"];

impl StrategySpec {
    /// Named configuration with its tuned learning rate and dropout.
    pub fn preset(name: &str) -> Result<Self> {
        let (label, kind, k, dropout) = match name {
            "baseline" => ("Baseline", StrategyKind::Baseline, KChoice::Fixed(1), 0.5),
            "feature2" => ("Two Feature Clusters", StrategyKind::FeatureClustered, KChoice::Fixed(2), 0.0),
            "feature4" => ("Four Feature Clusters", StrategyKind::FeatureClustered, KChoice::Fixed(4), 0.5),
            "loss-full" => ("Fully Separated Loss Dependent", StrategyKind::LossFullySeparated, KChoice::Auto, 0.0),
            "loss-final" => ("Final Layer Separated Loss Dependent", StrategyKind::LossFinalLayerSeparated, KChoice::Auto, 0.0),
            "id-embed" => ("ID Embedding", StrategyKind::IdEmbedding, KChoice::Fixed(1), 0.0),
            other => {
                return Err(Error::Validation(format!("unknown strategy {other:?}; expected one of {}", PRESET_NAMES.join("|"))))
            }
        };
        Ok(Self {
            name: label.to_string(),
            kind,
            k,
            train: TrainConfig { learning_rate: 0.001, dropout_rate: dropout, ..TrainConfig::default() },
            routing: RoutingOptions::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !self.kind.is_routed() && self.k != KChoice::Fixed(1) && self.k != KChoice::Auto {
            return Err(Error::Validation(format!("{} is unrouted; k must be 1", self.kind)));
        }
        Ok(())
    }

    pub fn with_train(&self, train: TrainConfig) -> Self {
        Self { train, ..self.clone() }
    }
}
