//! End-to-end runs of the `gftnn` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gftnn::scenario::{
    load_archive, synthesize_tracks, write_tracks, RawTrack, SynthOptions, SyntheticNeighbor, SyntheticTarget,
    TrackSchema, LANE_WIDTH,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gftnn-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn gftnn(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gftnn"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = gftnn(out, args);
    assert!(
        o.status.success(),
        "gftnn {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, fps: f64, seed: u64) -> PathBuf {
    ok(dir, &["--seed", &seed.to_string(), "synth", "--n", &n.to_string(), "--fps", &fps.to_string()]);
    dir.join("scenarios.json")
}

#[test]
fn synth_is_deterministic_and_balanced() {
    let (a, b) = (scratch("synth-a"), scratch("synth-b"));
    let log = ok(&a, &["--seed", "7", "synth", "--n", "300", "--fps", "10"]);
    ok(&b, &["--seed", "7", "synth", "--n", "300", "--fps", "10"]);
    assert_eq!(fs::read(a.join("scenarios.json")).unwrap(), fs::read(b.join("scenarios.json")).unwrap());
    assert!(log.contains("keep_lane=100"), "{log}");
    assert!(log.contains("lane_change_left=100"), "{log}");
    assert!(log.contains("lane_change_right=100"), "{log}");
    assert!(log.contains("t_obs: 30 t_pred: 50"), "{log}");
    fs::remove_dir_all(&a).unwrap();
    fs::remove_dir_all(&b).unwrap();
}

#[test]
fn horizons_follow_the_frame_rate() {
    let dir = scratch("fps");
    let low = load_archive(synth(&dir, 3, 10.0, 1)).unwrap();
    assert_eq!((low.t_obs, low.t_pred), (30, 50));
    let high = load_archive(synth(&dir, 3, 25.0, 1)).unwrap();
    assert_eq!((high.t_obs, high.t_pred), (75, 125));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn spectrum_preserves_energy_and_reconstructs() {
    let dir = scratch("spectrum");
    let archive = synth(&dir, 3, 10.0, 2);
    let log = ok(&dir, &["spectrum", "--archive", path_str(&archive), "--inverse"]);
    assert!(log.contains("parseval: ok"), "{log}");
    let eig = fs::read_to_string(dir.join("eigenvalues.csv")).unwrap();
    assert!(eig.lines().count() > 1);
    let coeffs = fs::read_to_string(dir.join("coefficients.csv")).unwrap();
    // header plus K · T_obs · N rows
    assert_eq!(coeffs.lines().count(), 1 + 4 * 30 * 9);

    let recon = fs::read_to_string(dir.join("reconstruction.csv")).unwrap();
    let worst = recon
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').skip(3).map(|v| v.parse().unwrap()).collect();
            (f[0] - f[1]).abs()
        })
        .fold(0.0_f64, f64::max);
    assert!(worst < 1e-9, "full reconstruction error {worst}");

    let log = ok(&dir, &["spectrum", "--archive", path_str(&archive), "--inverse", "--p", "10"]);
    assert!(log.contains("reconstruction p=10"), "{log}");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn train_resume_eval_predict() {
    let dir = scratch("train");
    let archive = synth(&dir, 30, 10.0, 3);
    let archive = path_str(&archive).to_string();
    let train = |extra: &[&str]| {
        let mut args = vec!["train", "--archive", &archive, "--preset", "gftnn-rdcby15", "--batch-size", "8"];
        args.extend_from_slice(extra);
        ok(&dir, &args)
    };
    let log = train(&["--epochs", "2"]);
    assert!(log.contains("epoch 2:"), "{log}");
    let ckpt = dir.join("checkpoint.json");
    let saved = dir.join("first.json");
    fs::copy(&ckpt, &saved).unwrap();
    let log = train(&["--epochs", "3", "--resume", path_str(&saved)]);
    assert!(log.contains("epoch 3:") && !log.contains("epoch 2:"), "{log}");
    let rows: Vec<String> = fs::read_to_string(dir.join("train_log.csv"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(rows[0], "epoch,train_loss,test_loss,ade,fde");
    let epochs: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["1", "2", "3"]);

    let ckpt_s = path_str(&ckpt).to_string();
    let log = ok(&dir, &["eval", "--archive", &archive, "--checkpoint", &ckpt_s, "--subset", "all"]);
    assert!(log.contains("scenarios: 30"), "{log}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("eval_report.json")).unwrap()).unwrap();
    assert!(report["ade"].as_f64().unwrap() > 0.0);
    let hist = fs::read_to_string(dir.join("histogram.csv")).unwrap();
    assert!(hist.starts_with("bin_start,bin_end,count"));
    let total: u64 = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, 30);

    let id = report["scenario_ids"][0].as_str().unwrap().to_string();
    ok(&dir, &["predict", "--archive", &archive, "--checkpoint", &ckpt_s, "--scenario-id", &id]);
    let pred_path = dir.join(format!("prediction_{id}.csv"));
    let first = fs::read_to_string(&pred_path).unwrap();
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines[0], "step,t,x,y");
    assert_eq!(lines.len(), 1 + 51);
    assert_eq!(lines[1], "0,0.0,0.0,0.0");
    ok(&dir, &["predict", "--archive", &archive, "--checkpoint", &ckpt_s, "--scenario-id", &id]);
    assert_eq!(fs::read_to_string(&pred_path).unwrap(), first);

    // a 25 Hz archive is refused by a 10 Hz checkpoint
    let other = scratch("train-25");
    let fast = synth(&other, 3, 25.0, 3);
    let o = gftnn(&other, &["eval", "--archive", path_str(&fast), "--checkpoint", &ckpt_s]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.starts_with("error: config:") && err.contains("Hz"), "{err}");
    fs::remove_dir_all(&dir).unwrap();
    fs::remove_dir_all(&other).unwrap();
}

#[test]
fn oracle_eval_is_zero() {
    let dir = scratch("oracle");
    let archive = synth(&dir, 9, 10.0, 4);
    let log = ok(&dir, &["eval", "--archive", path_str(&archive), "--oracle"]);
    assert!(log.contains("ade: 0.000000") && log.contains("fde: 0.000000"), "{log}");
    fs::remove_dir_all(&dir).unwrap();
}

/// Four targets, far apart on the same road: two keep their lane, one
/// changes left and one right. Each track covers exactly one window.
fn scene_tracks() -> Vec<RawTrack> {
    let options = SynthOptions {
        fps: 10.0,
        noise_std: 0.02,
        ..SynthOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let amplitudes = [0.0, LANE_WIDTH, 0.0, -LANE_WIDTH];
    let mut tracks = Vec::new();
    for (j, &amplitude) in amplitudes.iter().enumerate() {
        let target = SyntheticTarget {
            v0: 25.0 + j as f64,
            accel: 0.5,
            amplitude,
            rate: 2.0,
        };
        let neighbor = SyntheticNeighbor {
            lane: 1,
            dx: 20.0,
            speed: 24.0,
        };
        let (scene, _) = synthesize_tracks(&target, &[neighbor], &options, 5000.0 * j as f64, &mut rng);
        for mut t in scene {
            t.vehicle_id += 100 * j as i64;
            tracks.push(t);
        }
    }
    tracks
}

#[test]
fn prep_reads_both_schemas_and_balances() {
    let dir = scratch("prep");
    let tracks = scene_tracks();
    let (a, b) = (dir.join("a"), dir.join("b"));
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    let normalized = dir.join("tracks.csv");
    let highd = dir.join("highd.csv");
    write_tracks(&tracks, TrackSchema::Normalized, fs::File::create(&normalized).unwrap()).unwrap();
    write_tracks(&tracks, TrackSchema::HighdLike, fs::File::create(&highd).unwrap()).unwrap();

    let log = ok(&a, &["prep", "--input", path_str(&normalized), "--fps", "10"]);
    ok(&b, &["prep", "--input", path_str(&highd), "--schema", "highd_like", "--fps", "10"]);
    assert_eq!(fs::read(a.join("scenarios.json")).unwrap(), fs::read(b.join("scenarios.json")).unwrap());
    assert!(log.contains("balanced: keep_lane=1 lane_change_left=1 lane_change_right=1"), "{log}");
    let archive = load_archive(a.join("scenarios.json")).unwrap();
    assert_eq!((archive.t_obs, archive.t_pred, archive.fps), (30, 50, 10.0));

    let log = ok(&a, &["prep", "--input", path_str(&normalized), "--fps", "10", "--no-balance"]);
    assert!(!log.contains("balanced:"), "{log}");
    let unbalanced = load_archive(a.join("scenarios.json")).unwrap();
    assert!(unbalanced.scenarios().unwrap().len() > 3);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn failures_are_one_line() {
    let dir = scratch("errors");
    let o = gftnn(&dir, &["eval", "--archive", "/nonexistent/scenarios.json", "--oracle"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: io:"), "{err}");

    let o = gftnn(&dir, &["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().starts_with("error: usage:"));

    let archive = synth(&dir, 3, 10.0, 5);
    let config = dir.join("run.json");
    fs::write(&config, r#"{"preset": "gftnn-rdcby5", "model": {"p": 30}}"#).unwrap();
    let o = gftnn(
        &dir,
        &["--config", path_str(&config), "train", "--archive", path_str(&archive), "--epochs", "1"],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.starts_with("error: config:") && err.contains("fixes p"), "{err}");
    fs::remove_dir_all(&dir).unwrap();
}
