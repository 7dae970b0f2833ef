//! Scenario data model and the data pipeline around it.
//!
//! Coordinates follow one convention everywhere: `x` is longitudinal in the
//! driving direction, `y` is lateral and grows to the left. A scenario's
//! features are expressed relative to the target's first observed position,
//! and its future relative to the target's position at the last observed
//! step `t0`, which is where the decoder anchors its trajectory.

mod archive;
mod dataset;
mod extract;
mod ingest;
mod synth;

pub use archive::{load_archive, save_archive, ScenarioArchive, ScenarioRecord, ARCHIVE_VERSION};
pub use dataset::{balance, class_counts, split, DatasetSplit};
pub use extract::{extract_scenarios, label_maneuver, step_count, Extraction};
pub use ingest::{ingest_tracks, read_tracks, write_tracks, TrackSchema};
pub use synth::{
    synthesize, synthesize_scenario, synthesize_tracks, synthesize_with, SynthOptions, SyntheticNeighbor,
    SyntheticTarget, LANE_WIDTH,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GftnnError, Result};
use crate::model::Trajectory;
use crate::spectral::FeatureTensor;

/// Number of motion features per participant and time step.
pub const N_FEATURES: usize = 4;
pub const X_REL: usize = 0;
pub const Y_REL: usize = 1;
pub const VX: usize = 2;
pub const VY: usize = 3;

/// One row of a track: a vehicle's state at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackFrame {
    pub frame: i64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub lane_id: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTrack {
    pub vehicle_id: i64,
    /// Strictly increasing by `frame`.
    pub frames: Vec<TrackFrame>,
}

impl RawTrack {
    pub fn at(&self, frame: i64) -> Option<&TrackFrame> {
        self.frames
            .binary_search_by_key(&frame, |f| f.frame)
            .ok()
            .map(|i| &self.frames[i])
    }

    /// Frames `from..=to` if every one of them is present.
    pub fn span(&self, from: i64, to: i64) -> Option<&[TrackFrame]> {
        let start = self.frames.binary_search_by_key(&from, |f| f.frame).ok()?;
        let len = usize::try_from(to - from + 1).ok()?;
        let slice = self.frames.get(start..start + len)?;
        (slice.last()?.frame == to).then_some(slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Maneuver {
    KeepLane,
    LaneChangeLeft,
    LaneChangeRight,
}

impl Maneuver {
    pub const ALL: [Maneuver; 3] = [
        Maneuver::KeepLane,
        Maneuver::LaneChangeLeft,
        Maneuver::LaneChangeRight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Maneuver::KeepLane => "keep_lane",
            Maneuver::LaneChangeLeft => "lane_change_left",
            Maneuver::LaneChangeRight => "lane_change_right",
        }
    }
}

impl fmt::Display for Maneuver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Maneuver {
    type Err = GftnnError;

    fn from_str(s: &str) -> Result<Maneuver> {
        Maneuver::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| GftnnError::Data(format!("unknown maneuver `{s}`")))
    }
}

/// A target-centred observation window plus its ground-truth future.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    /// `4 × T_obs × N_V`, channels `(x_rel, y_rel, vx, vy)`, target in slot 0.
    pub features: FeatureTensor,
    /// Target positions at steps `1..=T_pred`, relative to its position at `t0`.
    pub future: Vec<(f64, f64)>,
    /// Longitudinal target velocity at `t0`, m/s.
    pub v0: f64,
    pub fps: f64,
    pub maneuver: Maneuver,
}

impl Scenario {
    pub fn t_obs(&self) -> usize {
        self.features.shape().1
    }

    pub fn t_pred(&self) -> usize {
        self.future.len()
    }

    pub fn n_vehicles(&self) -> usize {
        self.features.shape().2
    }

    /// Ground truth as a trajectory including the anchor at step 0.
    pub fn truth(&self) -> Trajectory {
        let mut x = Vec::with_capacity(self.future.len() + 1);
        let mut y = Vec::with_capacity(self.future.len() + 1);
        x.push(0.0);
        y.push(0.0);
        for &(fx, fy) in &self.future {
            x.push(fx);
            y.push(fy);
        }
        Trajectory { x, y }
    }

    /// Positions of all participants at the last observed step, in the
    /// scenario frame.
    pub fn positions_at_t0(&self) -> Vec<(f64, f64)> {
        let t = self.t_obs() - 1;
        (0..self.n_vehicles())
            .map(|v| (self.features.get(X_REL, t, v), self.features.get(Y_REL, t, v)))
            .collect()
    }
}
