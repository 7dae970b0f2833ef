//! Command implementations behind the `gftnn` binary.

pub mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gftnn::checkpoint::Checkpoint;
use gftnn::metrics::{EvalReport, DEFAULT_BIN_WIDTH};
use gftnn::model::{predict, ModelConfig, Trajectory};
use gftnn::scenario::{
    balance, class_counts, extract_scenarios, ingest_tracks, load_archive, save_archive, split, synthesize_with,
    Scenario, ScenarioArchive, SynthOptions, TrackSchema,
};
use gftnn::spectral::{gft_extended, inverse_gft, write_coefficients_csv, write_eigenvalues_csv};
use gftnn::training::{append_epoch_log, TrainConfig, Trainer};
use gftnn::{GftnnError, Result};

use crate::config::RunConfig;

/// Relative tolerance for the energy check in `spectrum`.
const PARSEVAL_TOL: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "gftnn", version, about = "Graph Fourier transform trajectory prediction")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a track CSV, cut scenarios, balance classes and write an archive.
    Prep(PrepArgs),
    /// Generate a balanced synthetic scenario archive.
    Synth(SynthArgs),
    /// Write the eigenvalues and transform coefficients of one scenario.
    Spectrum(SpectrumArgs),
    /// Train a model on an archive.
    Train(TrainArgs),
    /// Score a checkpoint on an archive.
    Eval(EvalArgs),
    /// Predict one scenario's trajectory.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "normalized")]
    pub schema: TrackSchema,
    #[arg(long)]
    pub fps: f64,
    /// Observation horizon, seconds.
    #[arg(long, default_value_t = 3.0)]
    pub t_obs: f64,
    /// Prediction horizon, seconds.
    #[arg(long, default_value_t = 5.0)]
    pub t_pred: f64,
    #[arg(long, default_value_t = 9)]
    pub n_vehicles: usize,
    /// Keep the natural class distribution.
    #[arg(long)]
    pub no_balance: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
    /// Position noise standard deviation, meters.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 9)]
    pub n_vehicles: usize,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub archive: Option<PathBuf>,
    /// Defaults to the first scenario.
    #[arg(long)]
    pub scenario_id: Option<String>,
    /// Also write the reconstruction from the first `p` temporal eigenvectors.
    #[arg(long)]
    pub inverse: bool,
    #[arg(long)]
    pub p: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<gftnn::model::Preset>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub split_ratio: Option<f64>,
    /// Continue from this checkpoint; `--epochs` is the new total.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    All,
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Score the ground truth against itself; no checkpoint needed.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Scenarios to score; train/test re-create the checkpoint's split.
    #[arg(long, value_enum, default_value_t = Subset::Test)]
    pub subset: Subset,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub scenario_id: String,
}

/// File names written into the output directory.
pub mod files {
    pub const ARCHIVE: &str = "scenarios.json";
    pub const CHECKPOINT: &str = "checkpoint.json";
    pub const TRAIN_LOG: &str = "train_log.csv";
    pub const EVAL_REPORT: &str = "eval_report.json";
    pub const HISTOGRAM: &str = "histogram.csv";
    pub const EIGENVALUES: &str = "eigenvalues.csv";
    pub const COEFFICIENTS: &str = "coefficients.csv";
    pub const RECONSTRUCTION: &str = "reconstruction.csv";
}

/// Merges the config file and global flags.
pub fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut run = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        run.seed = cli.seed;
    }
    if cli.out.is_some() {
        run.out = cli.out.clone();
    }
    Ok(run)
}

pub fn run(cli: &Cli, log: &mut dyn Write) -> Result<()> {
    let mut run = run_config(cli)?;
    let out = run.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| GftnnError::io(&out, e))?;
    match &cli.command {
        Command::Prep(a) => cmd_prep(&run, a, log),
        Command::Synth(a) => cmd_synth(&run, a, log),
        Command::Spectrum(a) => cmd_spectrum(&run, a, log),
        Command::Train(a) => {
            if a.preset.is_some() {
                run.preset = a.preset;
            }
            let t = &mut run.train;
            t.epochs = a.epochs.or(t.epochs);
            t.learning_rate = a.lr.or(t.learning_rate);
            t.batch_size = a.batch_size.or(t.batch_size);
            t.threads = a.threads.or(t.threads);
            run.split_ratio = a.split_ratio.or(run.split_ratio);
            cmd_train(&run, a, log)
        }
        Command::Eval(a) => cmd_eval(&run, a, log),
        Command::Predict(a) => cmd_predict(&run, a, log),
    }
}

fn say(log: &mut dyn Write, line: impl AsRef<str>) {
    // progress output is best effort
    let _ = writeln!(log, "{}", line.as_ref());
}

fn resolve(flag: &Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| fallback.clone())
        .ok_or_else(|| GftnnError::Config(format!("no {what} given")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| GftnnError::io(path, e))
}

fn format_counts(scenarios: &[Scenario]) -> String {
    class_counts(scenarios)
        .iter()
        .map(|(m, c)| format!("{m}={c}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn cmd_prep(run: &RunConfig, a: &PrepArgs, log: &mut dyn Write) -> Result<()> {
    let tracks = ingest_tracks(&a.input, a.schema)?;
    let extraction = extract_scenarios(&tracks, a.fps, a.t_obs, a.t_pred, a.n_vehicles)?;
    say(log, format!("tracks: {}", tracks.len()));
    say(log, format!("skipped windows: {}", extraction.skipped));
    say(log, format!("extracted: {}", format_counts(&extraction.scenarios)));
    let n_before = extraction.scenarios.len();
    let scenarios = if a.no_balance {
        extraction.scenarios
    } else {
        let balanced = balance(extraction.scenarios, run.seed())?;
        say(log, format!("balanced: {}", format_counts(&balanced)));
        say(log, format!("dropped: {}", n_before - balanced.len()));
        balanced
    };
    let first = scenarios
        .first()
        .ok_or_else(|| GftnnError::Data("no scenarios extracted".into()))?;
    let archive = ScenarioArchive::from_scenarios(
        &scenarios,
        a.fps,
        first.t_obs(),
        first.t_pred(),
        a.n_vehicles,
    )?;
    let path = run.out_dir().join(files::ARCHIVE);
    save_archive(&archive, &path)?;
    say(log, format!("wrote {}", path.display()));
    Ok(())
}

pub fn cmd_synth(run: &RunConfig, a: &SynthArgs, log: &mut dyn Write) -> Result<()> {
    if a.n == 0 {
        return Err(GftnnError::Config("--n must be positive".into()));
    }
    let options = SynthOptions {
        fps: a.fps,
        noise_std: a.noise,
        n_vehicles: a.n_vehicles,
        ..SynthOptions::default()
    };
    let scenarios = synthesize_with(a.n, run.seed(), &options);
    let first = &scenarios[0];
    let archive = ScenarioArchive::from_scenarios(&scenarios, a.fps, first.t_obs(), first.t_pred(), a.n_vehicles)?;
    let path = run.out_dir().join(files::ARCHIVE);
    save_archive(&archive, &path)?;
    say(log, format!("classes: {}", format_counts(&scenarios)));
    say(log, format!("t_obs: {} t_pred: {}", first.t_obs(), first.t_pred()));
    say(log, format!("wrote {}", path.display()));
    Ok(())
}

fn load_scenarios(path: &Path) -> Result<(ScenarioArchive, Vec<Scenario>)> {
    let archive = load_archive(path)?;
    let scenarios = archive.scenarios()?;
    if scenarios.is_empty() {
        return Err(GftnnError::Data(format!("{} holds no scenarios", path.display())));
    }
    Ok((archive, scenarios))
}

fn find<'a>(scenarios: &'a [Scenario], id: &str) -> Result<&'a Scenario> {
    scenarios
        .iter()
        .find(|s| s.id == id)
        .ok_or_else(|| GftnnError::Data(format!("no scenario `{id}` in archive")))
}

fn archive_model_config(run: &RunConfig, archive: &ScenarioArchive) -> Result<ModelConfig> {
    run.model_config(archive.fps, archive.t_obs, archive.t_pred, archive.n_vehicles)
}

pub fn cmd_spectrum(run: &RunConfig, a: &SpectrumArgs, log: &mut dyn Write) -> Result<()> {
    let (archive, scenarios) = load_scenarios(&resolve(&a.archive, &run.data, "archive")?)?;
    let scenario = match &a.scenario_id {
        Some(id) => find(&scenarios, id)?,
        None => &scenarios[0],
    };
    let config = archive_model_config(run, &archive)?;
    let static_basis = config.static_basis()?;
    let basis = config.scenario_basis(&static_basis, scenario)?;
    let fhat = gft_extended(&scenario.features, &basis)?;

    let out = run.out_dir();
    write_eigenvalues_csv(&basis, create(&out.join(files::EIGENVALUES))?)?;
    write_coefficients_csv(&fhat, create(&out.join(files::COEFFICIENTS))?)?;
    say(log, format!("scenario: {}", scenario.id));
    for k in 0..fhat.channels() {
        let (e_in, e_out) = (scenario.features.channel_norm(k), fhat.channel_norm(k));
        let rel = (e_in - e_out).abs() / e_in.max(f64::MIN_POSITIVE);
        let dc = fhat.get(k, 0, 0).powi(2) / (e_out * e_out).max(f64::MIN_POSITIVE);
        say(
            log,
            format!("channel {k}: norm {e_in:.6e} spectral norm {e_out:.6e} rel diff {rel:.2e} lowest-pair energy {dc:.4}"),
        );
        if rel > PARSEVAL_TOL {
            return Err(GftnnError::Contract(format!(
                "energy not preserved in channel {k}: relative difference {rel:.3e}"
            )));
        }
    }
    say(log, "parseval: ok");

    if a.inverse || a.p.is_some() {
        let p = a.p.unwrap_or(config.p);
        let recon = inverse_gft(&fhat, &basis, p)?;
        let mut w = create(&out.join(files::RECONSTRUCTION))?;
        let io = |e| GftnnError::io(out.join(files::RECONSTRUCTION), e);
        writeln!(w, "k,t,v,original,reconstructed").map_err(io)?;
        let (kk, tt, vv) = recon.shape();
        for k in 0..kk {
            for t in 0..tt {
                for v in 0..vv {
                    writeln!(
                        w,
                        "{k},{t},{v},{:?},{:?}",
                        scenario.features.get(k, t, v),
                        recon.get(k, t, v)
                    )
                    .map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)?;
        say(
            log,
            format!("reconstruction p={p}: max abs error {:.6e}", recon.max_abs_diff(&scenario.features)),
        );
    }
    say(log, format!("wrote {}", out.display()));
    Ok(())
}

pub fn cmd_train(run: &RunConfig, a: &TrainArgs, log: &mut dyn Write) -> Result<()> {
    let (archive, scenarios) = load_scenarios(&resolve(&a.archive, &run.data, "archive")?)?;
    let out = run.out_dir();
    let log_path = out.join(files::TRAIN_LOG);

    let (preset, config, tcfg, split_seed, split_ratio, resume) = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if run.preset.is_some_and(|p| p != ckpt.preset) {
                return Err(GftnnError::Config(format!(
                    "checkpoint was trained with preset {}",
                    ckpt.preset
                )));
            }
            if ckpt.config.fps != archive.fps {
                return Err(GftnnError::Config(format!(
                    "checkpoint is for {} Hz data, archive is {} Hz",
                    ckpt.config.fps, archive.fps
                )));
            }
            let tcfg = run.train_config(ckpt.train_config.clone())?;
            (ckpt.preset, ckpt.config, tcfg, ckpt.split_seed, ckpt.split_ratio, Some(ckpt.state))
        }
        None => {
            if log_path.exists() {
                std::fs::remove_file(&log_path).map_err(|e| GftnnError::io(&log_path, e))?;
            }
            let config = archive_model_config(run, &archive)?;
            let tcfg = run.train_config(TrainConfig::default())?;
            (
                run.preset.unwrap_or(gftnn::model::Preset::Gftnn),
                config,
                tcfg,
                run.seed(),
                run.split_ratio(),
                None,
            )
        }
    };

    let data = split(scenarios, split_ratio, split_seed)?;
    say(log, format!("preset: {preset}"));
    say(log, format!("train: {} test: {}", data.train.len(), data.test.len()));
    let mut trainer = Trainer::new(&data, &config, &tcfg, resume)?;
    say(log, format!("parameters: {}", trainer.state().params.len()));
    while trainer.state().epochs_completed < tcfg.epochs {
        let row = trainer.run_epoch()?;
        append_epoch_log(&log_path, &row)?;
        say(
            log,
            format!(
                "epoch {}: train_loss {:.6} test_loss {:.6} ade {:.4} fde {:.4}",
                row.epoch, row.train_loss, row.test_loss, row.ade, row.fde
            ),
        );
    }
    let ckpt = Checkpoint {
        preset,
        config,
        train_config: tcfg,
        split_seed,
        split_ratio,
        basis: trainer.basis().clone(),
        state: trainer.into_state(),
    };
    let path = out.join(files::CHECKPOINT);
    ckpt.save(&path)?;
    say(log, format!("wrote {}", path.display()));
    Ok(())
}

fn check_compatible(ckpt: &Checkpoint, archive: &ScenarioArchive) -> Result<()> {
    let c = &ckpt.config;
    if c.fps != archive.fps {
        return Err(GftnnError::Config(format!(
            "checkpoint is for {} Hz data, archive is {} Hz",
            c.fps, archive.fps
        )));
    }
    if (c.t_obs, c.t_pred, c.n_vehicles) != (archive.t_obs, archive.t_pred, archive.n_vehicles) {
        return Err(GftnnError::Dimension(format!(
            "checkpoint expects {}x{}x{} scenarios, archive holds {}x{}x{}",
            c.t_obs, c.t_pred, c.n_vehicles, archive.t_obs, archive.t_pred, archive.n_vehicles
        )));
    }
    Ok(())
}

pub fn cmd_eval(run: &RunConfig, a: &EvalArgs, log: &mut dyn Write) -> Result<()> {
    let (archive, scenarios) = load_scenarios(&resolve(&a.archive, &run.data, "archive")?)?;
    let bin_width = a.bin_width.or(run.bin_width).unwrap_or(DEFAULT_BIN_WIDTH);

    let (selected, preds): (Vec<Scenario>, Vec<Trajectory>) = if a.oracle {
        let preds = scenarios.iter().map(Scenario::truth).collect();
        (scenarios, preds)
    } else {
        let ckpt = Checkpoint::load(resolve(&a.checkpoint, &run.checkpoint, "checkpoint")?)?;
        check_compatible(&ckpt, &archive)?;
        let selected = match a.subset {
            Subset::All => scenarios,
            Subset::Train => split(scenarios, ckpt.split_ratio, ckpt.split_seed)?.train,
            Subset::Test => split(scenarios, ckpt.split_ratio, ckpt.split_seed)?.test,
        };
        let preds = selected
            .iter()
            .map(|s| predict(s, &ckpt.basis, &ckpt.state.params, &ckpt.config))
            .collect::<Result<Vec<_>>>()?;
        (selected, preds)
    };
    let truths: Vec<Trajectory> = selected.iter().map(Scenario::truth).collect();
    let ids = selected.iter().map(|s| s.id.clone()).collect();
    let report = EvalReport::new(ids, &preds, &truths, bin_width)?;

    let out = run.out_dir();
    report.write_json(out.join(files::EVAL_REPORT))?;
    let hist_path = out.join(files::HISTOGRAM);
    report.write_histogram_csv(create(&hist_path)?)?;
    say(log, format!("scenarios: {}", report.n_scenarios));
    say(log, format!("ade: {:.6}", report.ade));
    say(log, format!("fde: {:.6}", report.fde));
    say(log, format!("ade_euclid_mean: {:.6}", report.ade_euclid_mean));
    if let Some(mode) = report.histogram.mode() {
        say(log, format!("histogram mode: {mode:.3}"));
    }
    say(log, format!("wrote {}", out.display()));
    Ok(())
}

pub fn cmd_predict(run: &RunConfig, a: &PredictArgs, log: &mut dyn Write) -> Result<()> {
    let (archive, scenarios) = load_scenarios(&resolve(&a.archive, &run.data, "archive")?)?;
    let ckpt = Checkpoint::load(resolve(&a.checkpoint, &run.checkpoint, "checkpoint")?)?;
    check_compatible(&ckpt, &archive)?;
    let scenario = find(&scenarios, &a.scenario_id)?;
    let traj = predict(scenario, &ckpt.basis, &ckpt.state.params, &ckpt.config)?;

    let path = run.out_dir().join(format!("prediction_{}.csv", sanitize(&scenario.id)));
    let io = |e| GftnnError::io(&path, e);
    let mut w = create(&path)?;
    writeln!(w, "step,t,x,y").map_err(io)?;
    for i in 0..traj.len() {
        writeln!(w, "{i},{:?},{:?},{:?}", i as f64 / ckpt.config.fps, traj.x[i], traj.y[i]).map_err(io)?;
    }
    w.flush().map_err(io)?;
    say(log, format!("wrote {}", path.display()));
    Ok(())
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
