//! Sliding-window scenario extraction and maneuver labelling.

use super::{Maneuver, RawTrack, Scenario, TrackFrame, N_FEATURES, VX, VY, X_REL, Y_REL};
use crate::error::{GftnnError, Result};
use crate::spectral::FeatureTensor;

/// Result of [`extract_scenarios`]: the scenarios plus the number of
/// candidate windows dropped because a track did not cover them.
#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub scenarios: Vec<Scenario>,
    pub skipped: usize,
}

/// Number of frames covering `seconds` at `fps`.
pub fn step_count(fps: f64, seconds: f64) -> usize {
    (fps * seconds).round() as usize
}

/// Labels a window from the target's lane ids and lateral positions over
/// `t0..=t0 + T_pred` (index 0 is `t0`).
///
/// The first lane-id change decides; its direction comes from the sign of
/// the lateral displacement at that step (`y` grows to the left).
pub fn label_maneuver(lane_ids: &[i64], lateral: &[f64]) -> Maneuver {
    let Some(&start_lane) = lane_ids.first() else {
        return Maneuver::KeepLane;
    };
    let Some(change) = lane_ids.iter().position(|&l| l != start_lane) else {
        return Maneuver::KeepLane;
    };
    let y0 = lateral.first().copied().unwrap_or(0.0);
    let mut displacement = lateral.get(change).map_or(0.0, |y| y - y0);
    if displacement == 0.0 {
        displacement = lateral.last().map_or(0.0, |y| y - y0);
    }
    if displacement > 0.0 {
        Maneuver::LaneChangeLeft
    } else if displacement < 0.0 {
        Maneuver::LaneChangeRight
    } else {
        Maneuver::KeepLane
    }
}

/// Cuts every track into target-centred scenarios.
///
/// Each vehicle is used as a target for windows whose last observed frame
/// `t0` advances by `T_pred` frames. Neighbours must be present over the
/// whole observation window; the `n_vehicles − 1` closest to the target at
/// `t0` are kept and the remaining slots are filled with ghost copies of the
/// target.
pub fn extract_scenarios(
    tracks: &[RawTrack],
    fps: f64,
    t_obs: f64,
    t_pred: f64,
    n_vehicles: usize,
) -> Result<Extraction> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(GftnnError::Config(format!("fps must be positive, got {fps}")));
    }
    if n_vehicles < 1 {
        return Err(GftnnError::InvalidSize("n_vehicles must be at least 1".into()));
    }
    let obs_steps = step_count(fps, t_obs);
    let pred_steps = step_count(fps, t_pred);
    if obs_steps < 2 || pred_steps < 1 {
        return Err(GftnnError::InvalidSize(format!(
            "window of {obs_steps} observed / {pred_steps} predicted steps is too short"
        )));
    }

    let mut out = Extraction::default();
    for target in tracks {
        let (Some(first), Some(last)) = (target.frames.first(), target.frames.last()) else {
            continue;
        };
        let mut t0 = first.frame + obs_steps as i64 - 1;
        if t0 + pred_steps as i64 > last.frame {
            out.skipped += 1;
            continue;
        }
        while t0 + pred_steps as i64 <= last.frame {
            match build_window(tracks, target, t0, obs_steps, pred_steps, n_vehicles, fps) {
                Some(s) => out.scenarios.push(s),
                None => out.skipped += 1,
            }
            t0 += pred_steps as i64;
        }
    }
    Ok(out)
}

pub(super) fn build_window(
    tracks: &[RawTrack],
    target: &RawTrack,
    t0: i64,
    obs_steps: usize,
    pred_steps: usize,
    n_vehicles: usize,
    fps: f64,
) -> Option<Scenario> {
    let obs_start = t0 - obs_steps as i64 + 1;
    let observed = target.span(obs_start, t0)?;
    let future = target.span(t0, t0 + pred_steps as i64)?;
    let now = observed.last()?;

    let mut neighbours: Vec<(f64, i64, &[TrackFrame])> = tracks
        .iter()
        .filter(|t| t.vehicle_id != target.vehicle_id)
        .filter_map(|t| {
            let span = t.span(obs_start, t0)?;
            let at = span.last()?;
            let d = ((at.x - now.x).powi(2) + (at.y - now.y).powi(2)).sqrt();
            Some((d, t.vehicle_id, span))
        })
        .collect();
    neighbours.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    neighbours.truncate(n_vehicles.saturating_sub(1));

    let origin = (observed[0].x, observed[0].y);
    let mut features = FeatureTensor::zeros(N_FEATURES, obs_steps, n_vehicles);
    let mut fill = |slot: usize, span: &[TrackFrame]| {
        for (t, f) in span.iter().enumerate() {
            features.set(X_REL, t, slot, f.x - origin.0);
            features.set(Y_REL, t, slot, f.y - origin.1);
            features.set(VX, t, slot, f.vx);
            features.set(VY, t, slot, f.vy);
        }
    };
    fill(0, observed);
    for (slot, (_, _, span)) in neighbours.iter().enumerate() {
        fill(slot + 1, span);
    }
    // ghosts carry the target's own motion
    for slot in (neighbours.len() + 1)..n_vehicles {
        fill(slot, observed);
    }

    let lane_ids: Vec<i64> = future.iter().map(|f| f.lane_id).collect();
    let lateral: Vec<f64> = future.iter().map(|f| f.y).collect();
    Some(Scenario {
        id: format!("v{}-f{}", target.vehicle_id, t0),
        features,
        future: future[1..]
            .iter()
            .map(|f| (f.x - now.x, f.y - now.y))
            .collect(),
        v0: now.vx,
        fps,
        maneuver: label_maneuver(&lane_ids, &lateral),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_track(id: i64, frames: std::ops::Range<i64>, x0: f64, y: f64, v: f64, fps: f64) -> RawTrack {
        RawTrack {
            vehicle_id: id,
            frames: frames
                .map(|f| TrackFrame {
                    frame: f,
                    x: x0 + v * f as f64 / fps,
                    y,
                    vx: v,
                    vy: 0.0,
                    lane_id: 1,
                })
                .collect(),
        }
    }

    #[test]
    fn step_counts_for_both_frame_rates() {
        assert_eq!((step_count(25.0, 3.0), step_count(25.0, 5.0)), (75, 125));
        assert_eq!((step_count(10.0, 3.0), step_count(10.0, 5.0)), (30, 50));
    }

    #[test]
    fn labels() {
        assert_eq!(label_maneuver(&[2, 2, 2], &[0.0, 0.1, -0.1]), Maneuver::KeepLane);
        assert_eq!(
            label_maneuver(&[3, 3, 2, 2], &[0.0, -1.0, -2.0, -3.5]),
            Maneuver::LaneChangeRight
        );
        assert_eq!(
            label_maneuver(&[1, 2, 2], &[0.0, 2.0, 3.5]),
            Maneuver::LaneChangeLeft
        );
        assert_eq!(label_maneuver(&[], &[]), Maneuver::KeepLane);
    }

    #[test]
    fn lone_target_gets_ghosts() {
        let fps = 10.0;
        let track = straight_track(1, 0..80, 5.0, 1.75, 30.0, fps);
        let ex = extract_scenarios(&[track], fps, 3.0, 5.0, 9).unwrap();
        assert_eq!(ex.scenarios.len(), 1);
        let s = &ex.scenarios[0];
        assert_eq!((s.t_obs(), s.t_pred(), s.n_vehicles()), (30, 50, 9));
        for k in 0..4 {
            for t in 0..30 {
                for v in 1..9 {
                    assert_eq!(s.features.get(k, t, v).to_bits(), s.features.get(k, t, 0).to_bits());
                }
            }
        }
        assert_eq!((s.features.get(X_REL, 0, 0), s.features.get(Y_REL, 0, 0)), (0.0, 0.0));
        assert_eq!(s.v0, 30.0);
        assert_eq!(s.maneuver, Maneuver::KeepLane);
        assert!((s.future[49].0 - 30.0 * 5.0).abs() < 1e-9);
        // 80 frames hold one window of 80, the second would need 130
        assert_eq!(ex.skipped, 0);
    }

    #[test]
    fn short_tracks_and_gaps_are_skipped() {
        let fps = 10.0;
        let short = straight_track(1, 0..40, 0.0, 0.0, 30.0, fps);
        let mut gappy = straight_track(2, 0..80, 0.0, 3.5, 30.0, fps);
        gappy.frames.remove(50);
        let ex = extract_scenarios(&[short, gappy], fps, 3.0, 5.0, 9).unwrap();
        assert!(ex.scenarios.is_empty());
        assert_eq!(ex.skipped, 2);
    }

    #[test]
    fn nearest_neighbours_win() {
        let fps = 10.0;
        let target = straight_track(1, 0..80, 0.0, 0.0, 30.0, fps);
        let near = straight_track(2, 0..80, 10.0, 3.5, 30.0, fps);
        let far = straight_track(3, 0..80, 80.0, 0.0, 30.0, fps);
        let mid = straight_track(4, 0..80, -20.0, 0.0, 30.0, fps);
        let ex = extract_scenarios(&[target, near, far, mid], fps, 3.0, 5.0, 3).unwrap();
        let s = ex
            .scenarios
            .iter()
            .find(|s| s.id.starts_with("v1-"))
            .unwrap();
        // slot 1 nearest (vehicle 2), slot 2 next (vehicle 4)
        assert_eq!(s.features.get(X_REL, 0, 1), 10.0);
        assert_eq!(s.features.get(X_REL, 0, 2), -20.0);
    }

    #[test]
    fn translation_invariant() {
        // dyadic coordinates keep the subtraction exact
        let fps = 8.0;
        let tracks = vec![
            straight_track(1, 0..72, 0.5, 0.25, 24.0, fps),
            straight_track(2, 0..72, 16.0, 3.5, 20.0, fps),
        ];
        let shifted: Vec<RawTrack> = tracks
            .iter()
            .map(|t| RawTrack {
                vehicle_id: t.vehicle_id,
                frames: t
                    .frames
                    .iter()
                    .map(|f| TrackFrame {
                        x: f.x + 1024.0,
                        y: f.y - 64.0,
                        ..*f
                    })
                    .collect(),
            })
            .collect();
        let a = extract_scenarios(&tracks, fps, 3.0, 5.0, 9).unwrap();
        let b = extract_scenarios(&shifted, fps, 3.0, 5.0, 9).unwrap();
        assert!(!a.scenarios.is_empty());
        assert_eq!(a.scenarios, b.scenarios);
    }
}
