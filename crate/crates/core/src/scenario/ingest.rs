//! Track CSV ingestion.
//!
//! Two layouts are understood, both with a header row:
//!
//! | schema       | columns                                         |
//! |--------------|-------------------------------------------------|
//! | `normalized` | `frame,vehicle_id,x,y,vx,vy,lane_id`            |
//! | `highd_like` | `frame,id,x,y,xVelocity,yVelocity,laneId`       |
//!
//! Columns are located by name, so order and extra columns do not matter.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{RawTrack, TrackFrame};
use crate::error::{GftnnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackSchema {
    Normalized,
    HighdLike,
}

impl TrackSchema {
    /// Column names for `(frame, id, x, y, vx, vy, lane)`.
    pub fn columns(self) -> [&'static str; 7] {
        match self {
            TrackSchema::Normalized => ["frame", "vehicle_id", "x", "y", "vx", "vy", "lane_id"],
            TrackSchema::HighdLike => ["frame", "id", "x", "y", "xVelocity", "yVelocity", "laneId"],
        }
    }
}

impl FromStr for TrackSchema {
    type Err = GftnnError;

    fn from_str(s: &str) -> Result<TrackSchema> {
        match s {
            "normalized" => Ok(TrackSchema::Normalized),
            "highd_like" | "highd-like" => Ok(TrackSchema::HighdLike),
            other => Err(GftnnError::Config(format!("unknown track schema `{other}`"))),
        }
    }
}

pub fn ingest_tracks(path: impl AsRef<Path>, schema: TrackSchema) -> Result<Vec<RawTrack>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| GftnnError::io(path, e))?;
    read_tracks(file, schema)
}

/// Parses tracks from any reader; one track per vehicle id, sorted by id.
pub fn read_tracks<R: Read>(reader: R, schema: TrackSchema) -> Result<Vec<RawTrack>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut index = [0usize; 7];
    for (slot, name) in index.iter_mut().zip(schema.columns()) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| GftnnError::Schema {
                column: name.to_string(),
            })?;
    }

    let mut by_id: BTreeMap<i64, Vec<TrackFrame>> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        // header is line 1
        let row = i + 2;
        let record = record?;
        let cell = |c: usize| -> Result<&str> {
            record.get(index[c]).ok_or_else(|| GftnnError::Parse {
                row,
                message: format!("missing value for `{}`", schema.columns()[c]),
            })
        };
        let int = |c: usize| -> Result<i64> {
            let raw = cell(c)?;
            raw.parse::<i64>()
                .or_else(|_| {
                    // integral floats such as "3.0" are common in exports
                    raw.parse::<f64>()
                        .ok()
                        .filter(|v| v.fract() == 0.0 && v.is_finite())
                        .map(|v| v as i64)
                        .ok_or(())
                })
                .map_err(|_| GftnnError::Parse {
                    row,
                    message: format!("`{}` is not an integer: `{raw}`", schema.columns()[c]),
                })
        };
        let real = |c: usize| -> Result<f64> {
            let raw = cell(c)?;
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(GftnnError::Parse {
                    row,
                    message: format!("`{}` is not a finite number: `{raw}`", schema.columns()[c]),
                }),
            }
        };
        let frame = TrackFrame {
            frame: int(0)?,
            x: real(2)?,
            y: real(3)?,
            vx: real(4)?,
            vy: real(5)?,
            lane_id: int(6)?,
        };
        by_id.entry(int(1)?).or_default().push(frame);
    }

    by_id
        .into_iter()
        .map(|(vehicle_id, mut frames)| {
            frames.sort_by_key(|f| f.frame);
            if let Some(w) = frames.windows(2).find(|w| w[0].frame == w[1].frame) {
                return Err(GftnnError::Data(format!(
                    "vehicle {vehicle_id} has duplicate frame {}",
                    w[0].frame
                )));
            }
            Ok(RawTrack { vehicle_id, frames })
        })
        .collect()
}

/// Writes tracks in the given schema, rows ordered by frame then vehicle.
pub fn write_tracks<W: Write>(tracks: &[RawTrack], schema: TrackSchema, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(schema.columns())?;
    let mut rows: Vec<(i64, i64, &TrackFrame)> = tracks
        .iter()
        .flat_map(|t| t.frames.iter().map(move |f| (f.frame, t.vehicle_id, f)))
        .collect();
    rows.sort_by_key(|&(frame, id, _)| (frame, id));
    for (frame, id, f) in rows {
        w.write_record([
            frame.to_string(),
            id.to_string(),
            format!("{:?}", f.x),
            format!("{:?}", f.y),
            format!("{:?}", f.vx),
            format!("{:?}", f.vy),
            f.lane_id.to_string(),
        ])?;
    }
    w.flush().map_err(|e| GftnnError::io("<csv>", e))?;
    Ok(())
}
