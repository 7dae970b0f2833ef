//! JSON scenario archive.
//!
//! Features are flattened row-major in `(k, t, v)` order: feature channel,
//! observed time step, vehicle slot.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Maneuver, Scenario, N_FEATURES};
use crate::error::{GftnnError, Result};
use crate::spectral::FeatureTensor;

pub const ARCHIVE_VERSION: u32 = 1;
const INDEX_ORDER: &str = "k,t,v";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub id: String,
    pub maneuver: Maneuver,
    pub v0: f64,
    pub features: Vec<f64>,
    pub future_x: Vec<f64>,
    pub future_y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioArchive {
    pub version: u32,
    pub fps: f64,
    pub t_obs: usize,
    pub t_pred: usize,
    pub n_vehicles: usize,
    pub n_features: usize,
    pub index_order: String,
    pub scenarios: Vec<ScenarioRecord>,
}

impl ScenarioArchive {
    /// Packs scenarios that share one frame rate and shape.
    pub fn from_scenarios(scenarios: &[Scenario], fps: f64, t_obs: usize, t_pred: usize, n_vehicles: usize) -> Result<ScenarioArchive> {
        let mut records = Vec::with_capacity(scenarios.len());
        for s in scenarios {
            if s.fps != fps || s.t_obs() != t_obs || s.t_pred() != t_pred || s.n_vehicles() != n_vehicles {
                return Err(GftnnError::Dimension(format!(
                    "scenario {} ({} Hz, {}x{}x{}) does not match archive ({fps} Hz, {t_obs}x{t_pred}x{n_vehicles})",
                    s.id,
                    s.fps,
                    s.t_obs(),
                    s.t_pred(),
                    s.n_vehicles()
                )));
            }
            records.push(ScenarioRecord {
                id: s.id.clone(),
                maneuver: s.maneuver,
                v0: s.v0,
                features: s.features.values().to_vec(),
                future_x: s.future.iter().map(|p| p.0).collect(),
                future_y: s.future.iter().map(|p| p.1).collect(),
            });
        }
        Ok(ScenarioArchive {
            version: ARCHIVE_VERSION,
            fps,
            t_obs,
            t_pred,
            n_vehicles,
            n_features: N_FEATURES,
            index_order: INDEX_ORDER.to_string(),
            scenarios: records,
        })
    }

    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        if self.version != ARCHIVE_VERSION {
            return Err(GftnnError::Data(format!(
                "unsupported archive version {}",
                self.version
            )));
        }
        if self.index_order != INDEX_ORDER || self.n_features != N_FEATURES {
            return Err(GftnnError::Data(format!(
                "archive layout {} with {} features is not supported",
                self.index_order, self.n_features
            )));
        }
        self.scenarios
            .iter()
            .map(|r| {
                if r.future_x.len() != self.t_pred || r.future_y.len() != self.t_pred {
                    return Err(GftnnError::Dimension(format!(
                        "scenario {} has {} future steps, expected {}",
                        r.id,
                        r.future_x.len(),
                        self.t_pred
                    )));
                }
                Ok(Scenario {
                    id: r.id.clone(),
                    features: FeatureTensor::new(
                        self.n_features,
                        self.t_obs,
                        self.n_vehicles,
                        r.features.clone(),
                    )?,
                    future: r.future_x.iter().copied().zip(r.future_y.iter().copied()).collect(),
                    v0: r.v0,
                    fps: self.fps,
                    maneuver: r.maneuver,
                })
            })
            .collect()
    }
}

pub fn save_archive(archive: &ScenarioArchive, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| GftnnError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, archive)?;
    w.flush().map_err(|e| GftnnError::io(path, e))?;
    Ok(())
}

pub fn load_archive(path: impl AsRef<Path>) -> Result<ScenarioArchive> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| GftnnError::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::synthesize;

    #[test]
    fn archive_round_trip_is_exact() {
        let scenarios = synthesize(6, 10.0, 2, 0.05);
        let archive = ScenarioArchive::from_scenarios(&scenarios, 10.0, 30, 50, 9).unwrap();
        let text = serde_json::to_string(&archive).unwrap();
        let back: ScenarioArchive = serde_json::from_str(&text).unwrap();
        assert_eq!(back.scenarios().unwrap(), scenarios);
    }

    #[test]
    fn mismatched_shape_is_rejected() {
        let scenarios = synthesize(2, 10.0, 2, 0.0);
        assert!(ScenarioArchive::from_scenarios(&scenarios, 25.0, 30, 50, 9).is_err());
    }
}
