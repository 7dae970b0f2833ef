//! JSON checkpoints.
//!
//! Parameters are stored as named arrays of decimal strings written with
//! shortest round-trip formatting, so a save/load cycle is bit-exact. The
//! product basis is stored alongside and used for inference instead of being
//! recomputed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GftnnError, Result};
use crate::model::{ModelConfig, ModelParams, Preset};
use crate::spectral::ProductBasis;
use crate::training::{AdamState, TrainConfig, TrainState};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub preset: Preset,
    pub config: ModelConfig,
    pub train_config: TrainConfig,
    pub split_seed: u64,
    pub split_ratio: f64,
    pub basis: ProductBasis,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct NamedArray {
    name: String,
    shape: Vec<usize>,
    values: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct AdamFile {
    step: u64,
    m: Vec<NamedArray>,
    v: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    preset: Preset,
    config: ModelConfig,
    train_config: TrainConfig,
    split_seed: u64,
    split_ratio: f64,
    epochs_completed: usize,
    param_count: usize,
    basis: ProductBasis,
    params: Vec<NamedArray>,
    adam: AdamFile,
}

fn to_named(params: &ModelParams) -> Vec<NamedArray> {
    params
        .named()
        .map(|(seg, values)| NamedArray {
            name: seg.name.clone(),
            shape: seg.shape.clone(),
            values: values.iter().map(|v| format!("{v:?}")).collect(),
        })
        .collect()
}

fn from_named(config: &ModelConfig, arrays: &[NamedArray]) -> Result<ModelParams> {
    let parsed = arrays
        .iter()
        .map(|a| {
            let values = a
                .values
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| GftnnError::Checkpoint(format!("bad number `{s}` in `{}`", a.name)))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((a.name.clone(), values))
        })
        .collect::<Result<Vec<_>>>()?;
    ModelParams::from_named(config, &parsed)
}

impl Checkpoint {
    pub fn param_count(&self) -> usize {
        self.state.params.len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = CheckpointFile {
            format_version: CHECKPOINT_VERSION,
            preset: self.preset,
            config: self.config.clone(),
            train_config: self.train_config.clone(),
            split_seed: self.split_seed,
            split_ratio: self.split_ratio,
            epochs_completed: self.state.epochs_completed,
            param_count: self.param_count(),
            basis: self.basis.clone(),
            params: to_named(&self.state.params),
            adam: AdamFile {
                step: self.state.adam.step,
                m: to_named(&self.state.adam.m),
                v: to_named(&self.state.adam.v),
            },
        };
        let text = serde_json::to_string(&file)?;
        std::fs::write(path, text).map_err(|e| GftnnError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GftnnError::io(path, e))?;
        let file: CheckpointFile = serde_json::from_str(&text)?;
        if file.format_version != CHECKPOINT_VERSION {
            return Err(GftnnError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                file.format_version
            )));
        }
        file.config.validate()?;
        if file.basis.n_temporal() != file.config.t_obs || file.basis.n_spatial() != file.config.n_vehicles {
            return Err(GftnnError::Checkpoint("stored basis does not match the configuration".into()));
        }
        let params = from_named(&file.config, &file.params)?;
        if params.len() != file.param_count {
            return Err(GftnnError::Checkpoint(format!(
                "param_count {} disagrees with the stored arrays ({})",
                file.param_count,
                params.len()
            )));
        }
        let adam = AdamState {
            m: from_named(&file.config, &file.adam.m)?,
            v: from_named(&file.config, &file.adam.v)?,
            step: file.adam.step,
        };
        Ok(Checkpoint {
            preset: file.preset,
            config: file.config,
            train_config: file.train_config,
            split_seed: file.split_seed,
            split_ratio: file.split_ratio,
            basis: file.basis,
            state: TrainState {
                params,
                adam,
                epochs_completed: file.epochs_completed,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let config = ModelConfig::preset(Preset::GftnnRdcBy15, 10.0, 30, 50, 9).unwrap();
        let mut state = TrainState::fresh(&config, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for v in state.adam.m.values_mut() {
            *v = rng.gen_range(-1e-300..1e-300);
        }
        for v in state.adam.v.values_mut() {
            *v = rng.gen::<f64>() * 1e10;
        }
        state.params.values_mut()[0] = std::f64::consts::PI;
        state.adam.step = 17;
        state.epochs_completed = 4;
        let ckpt = Checkpoint {
            preset: Preset::GftnnRdcBy15,
            basis: config.static_basis().unwrap(),
            config,
            train_config: TrainConfig::default(),
            split_seed: 5,
            split_ratio: 0.7,
            state,
        };
        let dir = std::env::temp_dir().join(format!("gftnn-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"param_count\":"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = Checkpoint::load("/nonexistent/model.json").unwrap_err();
        assert!(matches!(err, GftnnError::Io { .. }));
    }
}
