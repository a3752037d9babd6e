use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{ForestConfig, SvmParams};
use crate::envstats::FeatureConfig;
use crate::error::{QusError, Result};
use crate::evaluation::BootstrapConfig;
use crate::neural::{CnnConfig, FusionConfig, MlpConfig};
use crate::specklesim::DatasetConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSearch {
    pub c_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub params: SvmParams,
}

impl Default for SvmSearch {
    fn default() -> Self {
        Self { c_grid: vec![0.1, 1.0, 10.0, 100.0], gamma_grid: vec![0.1, 1.0, 10.0], params: SvmParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSearch {
    pub trees_grid: Vec<usize>,
    /// `null` entries grow trees until their leaves are pure.
    pub depth_grid: Vec<Option<usize>>,
    pub base: ForestConfig,
}

impl Default for ForestSearch {
    fn default() -> Self {
        Self { trees_grid: vec![100, 300], depth_grid: vec![Some(4), Some(8), None], base: ForestConfig::default() }
    }
}

/// Everything a command needs besides its file arguments. Missing fields take
/// their defaults, unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    /// Schedule for `finetune`; the learning-rate bounds are scaled down
    /// automatically. Defaults to `train`.
    pub finetune: Option<TrainConfig>,
    /// `in_channels` is set from the model id.
    pub cnn: CnnConfig,
    pub mlp: MlpConfig,
    pub fusion: FusionConfig,
    pub svm: SvmSearch,
    pub forest: ForestSearch,
    pub bootstrap: BootstrapConfig,
    pub map_overlap: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            finetune: None,
            cnn: CnnConfig::default(),
            mlp: MlpConfig::default(),
            fusion: FusionConfig::default(),
            svm: SvmSearch::default(),
            forest: ForestSearch::default(),
            bootstrap: BootstrapConfig::default(),
            map_overlap: 0.5,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| QusError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| QusError::io(path, e))?;
        Self::from_json(&text).map_err(|e| QusError::Usage(format!("{}: {e}", path.display())))
    }

    /// Points every seeded component at `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.sim.rng_seed = seed;
        self.train.seed = seed;
        if let Some(ft) = &mut self.finetune {
            ft.seed = seed;
        }
        self.forest.base.seed = seed;
        self.bootstrap.seed = seed;
        self
    }

    pub fn finetune_config(&self) -> TrainConfig {
        self.finetune.unwrap_or(self.train)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::default().with_seed(9);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_field_is_a_usage_error() {
        let err = RunConfig::from_json(r#"{"trian": {}}"#).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn seed_reaches_every_component() {
        let cfg = RunConfig::default().with_seed(42);
        assert_eq!(cfg.dataset.sim.rng_seed, 42);
        assert_eq!(cfg.train.seed, 42);
        assert_eq!(cfg.forest.base.seed, 42);
        assert_eq!(cfg.bootstrap.seed, 42);
    }
}
