//! Synthetic highway scenarios.
//!
//! Targets move with constant longitudinal acceleration and, for lane
//! changes, a logistic lateral profile centred in the middle of the
//! prediction horizon, which is exactly the family the decoder can express.
//! Neighbours drive at constant speed in one of three lanes. Tracks are cut
//! into scenarios by the same window builder used for recorded data.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::extract::{build_window, step_count};
use super::{Maneuver, RawTrack, Scenario, TrackFrame};

/// Lane width in meters; lane `l` is centred at `y = l · LANE_WIDTH`.
pub const LANE_WIDTH: f64 = 3.5;
const TARGET_LANE: i64 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub fps: f64,
    pub t_obs: f64,
    pub t_pred: f64,
    pub n_vehicles: usize,
    /// Standard deviation of additive position noise, meters.
    pub noise_std: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            fps: 25.0,
            t_obs: 3.0,
            t_pred: 5.0,
            n_vehicles: 9,
            noise_std: 0.0,
        }
    }
}

/// Target motion relative to `t0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticTarget {
    /// Longitudinal velocity at `t0`, m/s.
    pub v0: f64,
    /// Constant longitudinal acceleration, m/s².
    pub accel: f64,
    /// Lateral displacement of the lane change, meters; 0 keeps the lane,
    /// positive moves left.
    pub amplitude: f64,
    /// Logistic rate of the lane change, 1/s.
    pub rate: f64,
}

impl SyntheticTarget {
    pub fn maneuver(&self) -> Maneuver {
        if self.amplitude > 0.0 {
            Maneuver::LaneChangeLeft
        } else if self.amplitude < 0.0 {
            Maneuver::LaneChangeRight
        } else {
            Maneuver::KeepLane
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticNeighbor {
    pub lane: i64,
    /// Longitudinal offset from the target at `t0`, meters.
    pub dx: f64,
    pub speed: f64,
}

fn lane_of(y: f64) -> i64 {
    (y / LANE_WIDTH + 0.5).floor() as i64
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Raw tracks for one synthetic scene; returns the tracks and the frame `t0`.
///
/// The target has vehicle id 0 and the neighbours ids `1..`.
pub fn synthesize_tracks(
    target: &SyntheticTarget,
    neighbors: &[SyntheticNeighbor],
    options: &SynthOptions,
    x_base: f64,
    rng: &mut impl Rng,
) -> (Vec<RawTrack>, i64) {
    let obs = step_count(options.fps, options.t_obs);
    let pred = step_count(options.fps, options.t_pred);
    let t0 = obs as i64 - 1;
    let horizon = pred as f64 / options.fps;
    let noise = (options.noise_std > 0.0).then(|| Normal::new(0.0, options.noise_std).unwrap());
    let jitter = |rng: &mut dyn rand::RngCore| noise.map_or(0.0, |n| n.sample(rng));

    let y_lane = TARGET_LANE as f64 * LANE_WIDTH;
    let mut target_frames = Vec::with_capacity(obs + pred);
    for f in 0..(obs + pred) as i64 {
        let s = (f - t0) as f64 / options.fps;
        let l = logistic(target.rate * (s - 0.5 * horizon));
        let y = y_lane + target.amplitude * l;
        target_frames.push(TrackFrame {
            frame: f,
            x: x_base + target.v0 * s + 0.5 * target.accel * s * s + jitter(rng),
            y: y + jitter(rng),
            vx: target.v0 + target.accel * s,
            vy: target.amplitude * target.rate * l * (1.0 - l),
            lane_id: lane_of(y),
        });
    }
    let mut tracks = vec![RawTrack {
        vehicle_id: 0,
        frames: target_frames,
    }];

    for (i, n) in neighbors.iter().enumerate() {
        let y = n.lane as f64 * LANE_WIDTH;
        let frames = (0..(obs + pred) as i64)
            .map(|f| {
                let s = (f - t0) as f64 / options.fps;
                TrackFrame {
                    frame: f,
                    x: x_base + n.dx + n.speed * s + jitter(rng),
                    y: y + jitter(rng),
                    vx: n.speed,
                    vy: 0.0,
                    lane_id: n.lane,
                }
            })
            .collect();
        tracks.push(RawTrack {
            vehicle_id: i as i64 + 1,
            frames,
        });
    }
    (tracks, t0)
}

/// Builds one scenario; the label comes from the target definition.
pub fn synthesize_scenario(
    id: String,
    target: &SyntheticTarget,
    neighbors: &[SyntheticNeighbor],
    options: &SynthOptions,
    rng: &mut impl Rng,
) -> Scenario {
    let x_base = rng.gen_range(0.0..1000.0);
    let (tracks, t0) = synthesize_tracks(target, neighbors, options, x_base, rng);
    let obs = step_count(options.fps, options.t_obs);
    let pred = step_count(options.fps, options.t_pred);
    let mut scenario = build_window(
        &tracks,
        &tracks[0],
        t0,
        obs,
        pred,
        options.n_vehicles,
        options.fps,
    )
    .expect("synthetic tracks cover the full window");
    scenario.id = id;
    scenario.maneuver = target.maneuver();
    scenario
}

/// `n` scenarios cycling keep-lane, left and right lane changes.
pub fn synthesize(n: usize, fps: f64, seed: u64, noise_std: f64) -> Vec<Scenario> {
    let options = SynthOptions {
        fps,
        noise_std,
        ..SynthOptions::default()
    };
    synthesize_with(n, seed, &options)
}

pub fn synthesize_with(n: usize, seed: u64, options: &SynthOptions) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let amplitude = match Maneuver::ALL[i % 3] {
                Maneuver::KeepLane => 0.0,
                Maneuver::LaneChangeLeft => LANE_WIDTH,
                Maneuver::LaneChangeRight => -LANE_WIDTH,
            };
            let target = SyntheticTarget {
                v0: rng.gen_range(20.0..35.0),
                accel: rng.gen_range(-2.0..2.0),
                amplitude,
                rate: rng.gen_range(1.0..3.0),
            };
            let n_neighbors = rng.gen_range(0..options.n_vehicles);
            let neighbors: Vec<SyntheticNeighbor> = (0..n_neighbors)
                .map(|_| SyntheticNeighbor {
                    lane: rng.gen_range(TARGET_LANE - 1..=TARGET_LANE + 1),
                    dx: rng.gen_range(-50.0..50.0),
                    speed: rng.gen_range(20.0..35.0),
                })
                .collect();
            synthesize_scenario(format!("synth-{seed}-{i:05}"), &target, &neighbors, options, &mut rng)
        })
        .collect()
}
