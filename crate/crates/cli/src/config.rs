//! Run configuration: a JSON file whose values are overridden by flags.

use std::path::{Path, PathBuf};

use gftnn::model::{GraphKind, ModelConfig, Preset};
use gftnn::training::TrainConfig;
use gftnn::{GftnnError, Result};
use serde::Deserialize;

pub const DEFAULT_SPLIT_RATIO: f64 = 0.7;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub n_features: Option<usize>,
    pub p: Option<usize>,
    pub hidden: Option<usize>,
    pub block_out: Option<usize>,
    pub n_blocks: Option<usize>,
    pub graph_kind: Option<GraphKind>,
    pub weighted: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    /// Scenario archive.
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Output directory.
    pub out: Option<PathBuf>,
    pub split_ratio: Option<f64>,
    pub bin_width: Option<f64>,
    pub model: ModelOverrides,
    pub train: TrainOverrides,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GftnnError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| GftnnError::Config(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn split_ratio(&self) -> f64 {
        self.split_ratio.unwrap_or(DEFAULT_SPLIT_RATIO)
    }

    /// Model configuration for data of the given shape.
    ///
    /// Named presets fix `n_features`, `p` and `weighted`; an override that
    /// disagrees with them is an error. `custom` starts from the full-spectrum
    /// preset and accepts every override.
    pub fn model_config(&self, fps: f64, t_obs: usize, t_pred: usize, n_vehicles: usize) -> Result<ModelConfig> {
        let preset = self.preset.unwrap_or(Preset::Gftnn);
        let mut config = ModelConfig::preset(preset, fps, t_obs, t_pred, n_vehicles)?;
        let o = &self.model;
        if preset != Preset::Custom {
            let clash = |name: &str, wanted: String, fixed: String| {
                GftnnError::Config(format!("preset {preset} fixes {name} = {fixed}, config asks for {wanted}"))
            };
            if let Some(k) = o.n_features.filter(|&k| k != config.n_features) {
                return Err(clash("n_features", k.to_string(), config.n_features.to_string()));
            }
            if let Some(p) = o.p.filter(|&p| p != config.p) {
                return Err(clash("p", p.to_string(), config.p.to_string()));
            }
            if let Some(w) = o.weighted.filter(|&w| w != config.weighted) {
                return Err(clash("weighted", w.to_string(), config.weighted.to_string()));
            }
        }
        config.n_features = o.n_features.unwrap_or(config.n_features);
        config.p = o.p.unwrap_or(config.p);
        config.weighted = o.weighted.unwrap_or(config.weighted);
        config.hidden = o.hidden.unwrap_or(config.hidden);
        config.block_out = o.block_out.unwrap_or(config.block_out);
        config.n_blocks = o.n_blocks.unwrap_or(config.n_blocks);
        config.graph_kind = o.graph_kind.unwrap_or(config.graph_kind);
        config.validate()?;
        Ok(config)
    }

    /// Training configuration on top of `base`.
    pub fn train_config(&self, base: TrainConfig) -> Result<TrainConfig> {
        let t = &self.train;
        let config = TrainConfig {
            learning_rate: t.learning_rate.unwrap_or(base.learning_rate),
            epochs: t.epochs.unwrap_or(base.epochs),
            batch_size: t.batch_size.unwrap_or(base.batch_size),
            seed: self.seed.unwrap_or(base.seed),
            adam_beta1: t.adam_beta1.unwrap_or(base.adam_beta1),
            adam_beta2: t.adam_beta2.unwrap_or(base.adam_beta2),
            adam_eps: t.adam_eps.unwrap_or(base.adam_eps),
            threads: t.threads.unwrap_or(base.threads),
        };
        config.validate()?;
        Ok(config)
    }
}
