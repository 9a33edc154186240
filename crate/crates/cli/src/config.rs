//! The TOML run configuration and how command-line flags override it.

use std::path::{Path, PathBuf};

use anyhow::Context;
use routed_mlp::analysis::{LossColoring, TsneConfig};
use routed_mlp::data::SynthConfig;
use routed_mlp::eval::{CvOptions, Grid, ResampleOptions};
use routed_mlp::nn::{LossRecording, TrainConfig};
use routed_mlp::strategies::{KChoice, RoutingOptions, StrategySpec};
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const DEFAULT_OUT_DIR: &str = "out";

/// Training settings layered over the strategy preset. Unset fields keep the
/// preset's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub dropout_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub loss_recording: Option<LossRecording>,
}

impl TrainSection {
    fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            dropout_rate: self.dropout_rate.unwrap_or(base.dropout_rate),
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            beta1: self.beta1.unwrap_or(base.beta1),
            beta2: self.beta2.unwrap_or(base.beta2),
            epsilon: self.epsilon.unwrap_or(base.epsilon),
            loss_recording: self.loss_recording.unwrap_or(base.loss_recording),
            seed: base.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub histogram_bins: usize,
    pub coloring: LossColoring,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { histogram_bins: 20, coloring: LossColoring::PerSample }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Root seed; every other seed is derived from it by name.
    pub seed: Option<u64>,
    pub strategy: String,
    /// Overrides the preset's k.
    pub k: Option<KChoice>,
    pub out_dir: Option<PathBuf>,
    pub train: TrainSection,
    pub routing: RoutingOptions,
    pub synth: SynthConfig,
    pub cv: CvOptions,
    pub resample: ResampleOptions,
    pub grid: Grid,
    pub tsne: TsneConfig,
    pub analysis: AnalysisSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: None,
            strategy: "baseline".into(),
            k: None,
            out_dir: None,
            train: TrainSection::default(),
            routing: RoutingOptions::default(),
            synth: SynthConfig::default(),
            cv: CvOptions::default(),
            resample: ResampleOptions::default(),
            grid: Grid::default(),
            tsne: TsneConfig::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub strategy: Option<String>,
    pub k: Option<KChoice>,
    pub runs: Option<usize>,
    pub folds: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    pub fn with_overrides(mut self, o: &Overrides) -> Self {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if let Some(s) = &o.strategy {
            self.strategy = s.clone();
        }
        if o.k.is_some() {
            self.k = o.k;
        }
        if let Some(r) = o.runs {
            self.resample.runs = r;
        }
        if let Some(f) = o.folds {
            self.cv.folds = f;
        }
        if o.out_dir.is_some() {
            self.out_dir = o.out_dir.clone();
        }
        self
    }

    pub fn root_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    /// Preset plus config overrides, without a training seed.
    pub fn spec(&self) -> anyhow::Result<StrategySpec> {
        let mut spec = StrategySpec::preset(&self.strategy).map_err(|e| UsageError(e.to_string()))?;
        if let Some(k) = self.k {
            spec.k = k;
        }
        spec.train = self.train.apply(&spec.train);
        spec.routing = self.routing.clone();
        spec.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(spec)
    }

    /// Like [`Config::spec`], but a `k` set for an unrouted strategy is left to
    /// the caller instead of failing validation.
    pub fn routing_spec(&self) -> anyhow::Result<StrategySpec> {
        let kind = StrategySpec::preset(&self.strategy).map_err(|e| UsageError(e.to_string()))?.kind;
        if kind.is_routed() {
            self.spec()
        } else {
            Config { k: None, ..self.clone() }.spec()
        }
    }

    /// Checks that every section is usable, so bad settings fail before any work.
    /// `routing` relaxes the k check as [`Config::routing_spec`] does.
    pub fn validate(&self, routing: bool) -> anyhow::Result<()> {
        if routing {
            self.routing_spec()?;
        } else {
            self.spec()?;
        }
        let bad = |m: String| -> anyhow::Result<()> { Err(UsageError(m).into()) };
        if self.cv.folds < 2 {
            return bad(format!("folds must be >= 2, got {}", self.cv.folds));
        }
        if !(self.cv.val_fraction > 0.0 && self.cv.val_fraction < 1.0) {
            return bad(format!("cv.val_fraction must lie in (0,1), got {}", self.cv.val_fraction));
        }
        if self.resample.runs == 0 {
            return bad("runs must be >= 1".into());
        }
        if !(self.resample.fraction > 0.0 && self.resample.fraction <= 1.0) {
            return bad(format!("resample.fraction must lie in (0,1], got {}", self.resample.fraction));
        }
        if self.grid.learning_rates.is_empty() || self.grid.dropout_rates.is_empty() {
            return bad("grid needs at least one learning rate and one dropout rate".into());
        }
        if self.analysis.histogram_bins == 0 {
            return bad("analysis.histogram_bins must be >= 1".into());
        }
        if let Err(e) = self.synth.validate() {
            return bad(format!("synth: {e}"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_override_presets() {
        let c: Config = toml::from_str("strategy = \"loss-final\"\nk = \"3\"\n[train]\nepochs = 5\n[cv]\nfolds = 4\n").unwrap();
        let spec = c.spec().unwrap();
        assert_eq!(spec.k, KChoice::Fixed(3));
        assert_eq!(spec.train.epochs, 5);
        assert_eq!(spec.train.dropout_rate, 0.0);
        assert_eq!(c.cv.folds, 4);
    }

    #[test]
    fn flags_beat_file() {
        let c: Config = toml::from_str("seed = 3\n[resample]\nruns = 2\n").unwrap();
        let c = c.with_overrides(&Overrides { seed: Some(9), runs: Some(7), ..Overrides::default() });
        assert_eq!(c.root_seed(), 9);
        assert_eq!(c.resample.runs, 7);
    }

    #[test]
    fn unknown_section_is_rejected() {
        assert!(toml::from_str::<Config>("[trian]\nepochs = 1\n").is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let c = Config { cv: CvOptions { folds: 1, ..CvOptions::default() }, ..Config::default() };
        assert!(c.validate(false).is_err());
        let c = Config { strategy: "nope".into(), ..Config::default() };
        assert!(c.validate(false).is_err());
    }

    #[test]
    fn routing_accepts_k_for_unrouted_strategy() {
        let c = Config { k: Some(KChoice::Fixed(2)), ..Config::default() };
        assert!(c.validate(false).is_err());
        assert!(c.validate(true).is_ok());
    }
}
