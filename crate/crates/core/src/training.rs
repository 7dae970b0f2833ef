//! Loss, backpropagation, Adam and the training loop.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GftnnError, Result};
use crate::metrics::{ade, fde};
use crate::model::{
    decode, decode_jacobian, encode, encode_traced, gelu_derivative, spectral_input, EncoderTrace,
    ModelConfig, ModelParams, Trajectory, LATENT_DIM,
};
use crate::scenario::{DatasetSplit, Scenario};
use crate::spectral::ProductBasis;

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

/// Scenarios per work unit when a batch is spread over threads. Fixed so the
/// summation order never depends on the thread count.
const CHUNK: usize = 8;
/// Stream reserved for parameter initialization; epochs use their index.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Worker threads for per-scenario gradients; 0 uses all cores.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 30,
            batch_size: 64,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed: it freezes the parameters
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(GftnnError::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(GftnnError::Config(format!("{name} = {b} outside (0, 1)")));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(GftnnError::Config("adam_eps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(GftnnError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    fn worker_count(&self) -> usize {
        if self.threads > 0 {
            self.threads
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

/// Sum of the mean squared x and y errors over steps `1..=T_pred`, m².
pub fn loss(pred: &Trajectory, truth: &Trajectory) -> Result<f64> {
    if pred.x.len() != pred.y.len() || truth.x.len() != truth.y.len() || pred.len() != truth.len() {
        return Err(GftnnError::Dimension(format!(
            "prediction has {} steps, truth {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < 2 {
        return Err(GftnnError::Dimension("trajectory has no future steps".into()));
    }
    let n = (pred.len() - 1) as f64;
    let sx: f64 = (1..pred.len()).map(|i| (pred.x[i] - truth.x[i]).powi(2)).sum();
    let sy: f64 = (1..pred.len()).map(|i| (pred.y[i] - truth.y[i]).powi(2)).sum();
    Ok(sx / n + sy / n)
}

fn check_finite(values: &[f64], layer: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GftnnError::Numeric {
            layer: layer.to_string(),
        })
    }
}

/// Loss and its gradient for one scenario given its truncated spectrum.
pub fn loss_and_gradients_from_input(
    s: &[f64],
    v0: f64,
    truth: &Trajectory,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(f64, Gradients)> {
    let trace = encode_traced(s, params, config)?;
    let pred = decode(&trace.latent, v0, config.t_pred, config.fps);
    let value = loss(&pred, truth)?;
    check_finite(&[value], "loss")?;

    let jac = decode_jacobian(&trace.latent, config.t_pred, config.fps);
    let scale = 2.0 / config.t_pred as f64;
    let mut dh = [0.0; LATENT_DIM];
    for i in 1..pred.len() {
        let rx = scale * (pred.x[i] - truth.x[i]);
        let ry = scale * (pred.y[i] - truth.y[i]);
        dh[0] += rx * jac.dx_daccel[i];
        dh[1] += ry * jac.dy_damplitude[i];
        dh[2] += ry * jac.dy_drate[i];
    }
    check_finite(&dh, "decoder")?;
    Ok((value, backward(&trace, params, config, &dh)?))
}

fn backward(trace: &EncoderTrace, params: &ModelParams, config: &ModelConfig, dh: &[f64]) -> Result<Gradients> {
    let mut grads = ModelParams::zeros_like(params);
    let layout = params.layout();
    let w = params.values();
    let c = &trace.squashed;
    let nc = c.len();

    // head: h_z = W_h · c + b_h
    let head_w = layout.segment("head.w").expect("head.w").offset;
    let head_b = layout.segment("head.b").expect("head.b").offset;
    let g = grads.values_mut();
    let mut dconcat = vec![0.0; nc];
    for (r, &d) in dh.iter().enumerate() {
        g[head_b + r] = d;
        for j in 0..nc {
            g[head_w + r * nc + j] = d * c[j];
            dconcat[j] += w[head_w + r * nc + j] * d;
        }
    }
    // sigmoid
    for (d, &cj) in dconcat.iter_mut().zip(c) {
        *d *= cj * (1.0 - cj);
    }
    check_finite(&g[head_w..head_b + LATENT_DIM], "head")?;

    let zk = config.block_input();
    let gate = layout.segment("gate").expect("gate").offset;
    for (k, traces) in trace.blocks.iter().enumerate() {
        let mut dout = dconcat[k * config.block_out..(k + 1) * config.block_out].to_vec();
        for (r, bt) in traces.iter().enumerate().rev() {
            let name = |p: &str| format!("feature{k}.block{r}.{p}");
            let seg = |p: &str| layout.segment(&name(p)).expect("block segment").offset;
            let (w_n, b_n, w_l, b_l) = (seg("w_n"), seg("b_n"), seg("w_l"), seg("b_l"));
            let hidden = bt.act.len();
            let input = bt.normed.len();
            let out = dout.len();

            // output layer
            let mut dact = vec![0.0; hidden];
            for (o, &d) in dout.iter().enumerate() {
                g[b_l + o] = d;
                for h in 0..hidden {
                    g[w_l + o * hidden + h] = d * bt.act[h];
                    dact[h] += w[w_l + o * hidden + h] * d;
                }
            }
            // GELU
            let dpre: Vec<f64> = dact
                .iter()
                .zip(&bt.pre)
                .map(|(d, &x)| d * gelu_derivative(x))
                .collect();
            // hidden layer
            let mut dnormed = vec![0.0; input];
            for (h, &d) in dpre.iter().enumerate() {
                g[b_n + h] = d;
                let row = w_n + h * input;
                for i in 0..input {
                    g[row + i] = d * bt.normed[i];
                    dnormed[i] += w[row + i] * d;
                }
            }
            // layer norm, including the mean and variance paths
            let n = input as f64;
            let mean_d = dnormed.iter().sum::<f64>() / n;
            let mean_dn = dnormed.iter().zip(&bt.normed).map(|(d, x)| d * x).sum::<f64>() / n;
            dout = dnormed
                .iter()
                .zip(&bt.normed)
                .map(|(d, x)| bt.inv_std * (d - mean_d - x * mean_dn))
                .collect();
            check_finite(&g[w_n..b_l + out], &format!("feature{k}.block{r}"))?;
            check_finite(&dout, &format!("feature{k}.block{r}.layer_norm"))?;
        }
        // gate: gated = s ⊙ w_s
        for (i, d) in dout.iter().enumerate() {
            let j = k * zk + i;
            g[gate + j] = d * trace.spectrum[j];
        }
    }
    check_finite(&g[gate..gate + config.spectrum_len()], "gate")?;
    Ok(grads)
}

/// Loss gradient for one scenario.
pub fn gradients(scenario: &Scenario, params: &ModelParams, config: &ModelConfig, basis: &ProductBasis) -> Result<Gradients> {
    Ok(loss_and_gradients(scenario, params, config, basis)?.1)
}

pub fn loss_and_gradients(
    scenario: &Scenario,
    params: &ModelParams,
    config: &ModelConfig,
    basis: &ProductBasis,
) -> Result<(f64, Gradients)> {
    let s = spectral_input(scenario, basis, config)?;
    loss_and_gradients_from_input(&s, scenario.v0, &scenario.truth(), params, config)
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        AdamState {
            m: ModelParams::zeros_like(params),
            v: ModelParams::zeros_like(params),
            step: 0,
        }
    }
}

pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, tcfg: &TrainConfig) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) || !params.same_layout(&state.v) {
        return Err(GftnnError::Dimension("optimizer state does not match the parameters".into()));
    }
    state.step += 1;
    let (b1, b2) = (tcfg.adam_beta1, tcfg.adam_beta2);
    let c1 = 1.0 - b1.powf(state.step as f64);
    let c2 = 1.0 - b2.powf(state.step as f64);
    let m = state.m.values_mut();
    let v = state.v.values_mut();
    for (i, (p, &g)) in params.values_mut().iter_mut().zip(grads.values()).enumerate() {
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        *p -= tcfg.learning_rate * m_hat / (v_hat.sqrt() + tcfg.adam_eps);
    }
    Ok(())
}

/// Scenarios reduced to what training needs: spectrum, `v0` and truth.
#[derive(Debug, Clone, Default)]
pub struct PreparedSet {
    pub ids: Vec<String>,
    pub inputs: Vec<Vec<f64>>,
    pub v0: Vec<f64>,
    pub truths: Vec<Trajectory>,
}

impl PreparedSet {
    pub fn new(scenarios: &[Scenario], basis: &ProductBasis, config: &ModelConfig) -> Result<PreparedSet> {
        let mut set = PreparedSet::default();
        for s in scenarios {
            set.ids.push(s.id.clone());
            set.inputs.push(spectral_input(s, basis, config)?);
            set.v0.push(s.v0);
            set.truths.push(s.truth());
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn predict(&self, params: &ModelParams, config: &ModelConfig) -> Result<Vec<Trajectory>> {
        self.inputs
            .iter()
            .zip(&self.v0)
            .map(|(s, &v0)| Ok(decode(&encode(s, params, config)?, v0, config.t_pred, config.fps)))
            .collect()
    }

    /// Mean loss, ADE and FDE; `None` on an empty set.
    pub fn evaluate(&self, params: &ModelParams, config: &ModelConfig) -> Result<Option<(f64, f64, f64)>> {
        if self.is_empty() {
            return Ok(None);
        }
        let preds = self.predict(params, config)?;
        let mut total = 0.0;
        for (p, t) in preds.iter().zip(&self.truths) {
            total += loss(p, t)?;
        }
        Ok(Some((
            total / preds.len() as f64,
            ade(&preds, &self.truths)?,
            fde(&preds, &self.truths)?,
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub ade: f64,
    pub fde: f64,
}

pub fn write_epoch_log(log: &[EpochLog], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| GftnnError::Data(format!("writing training log: {e}")))?;
    Ok(())
}

/// Appends one row to a CSV log, writing the header first if the file is
/// new or empty.
pub fn append_epoch_log(path: impl AsRef<Path>, row: &EpochLog) -> Result<()> {
    let path = path.as_ref();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| GftnnError::io(path, e))?;
    let empty = file.metadata().map_err(|e| GftnnError::io(path, e))?.len() == 0;
    let mut w = csv::WriterBuilder::new().has_headers(empty).from_writer(file);
    w.serialize(row)?;
    w.flush().map_err(|e| GftnnError::io(path, e))?;
    Ok(())
}

/// Everything needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    pub epochs_completed: usize,
}

impl TrainState {
    pub fn fresh(config: &ModelConfig, seed: u64) -> TrainState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let params = ModelParams::init(config, &mut rng);
        let adam = AdamState::new(&params);
        TrainState {
            params,
            adam,
            epochs_completed: 0,
        }
    }
}

pub struct Trainer {
    config: ModelConfig,
    tcfg: TrainConfig,
    basis: ProductBasis,
    train: PreparedSet,
    test: PreparedSet,
    state: TrainState,
}

impl Trainer {
    /// Precomputes every spectrum; starts from `resume` or a fresh
    /// initialization drawn from the seed.
    pub fn new(split: &DatasetSplit, config: &ModelConfig, tcfg: &TrainConfig, resume: Option<TrainState>) -> Result<Trainer> {
        config.validate()?;
        tcfg.validate()?;
        if split.train.is_empty() {
            return Err(GftnnError::Data("training set is empty".into()));
        }
        let basis = config.static_basis()?;
        let state = match resume {
            Some(s) => {
                if s.params.layout() != ModelParams::zeros(config).layout() {
                    return Err(GftnnError::Checkpoint("checkpoint parameters do not match the configuration".into()));
                }
                s
            }
            None => TrainState::fresh(config, tcfg.seed),
        };
        Ok(Trainer {
            train: PreparedSet::new(&split.train, &basis, config)?,
            test: PreparedSet::new(&split.test, &basis, config)?,
            config: config.clone(),
            tcfg: tcfg.clone(),
            basis,
            state,
        })
    }

    pub fn basis(&self) -> &ProductBasis {
        &self.basis
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn train_set(&self) -> &PreparedSet {
        &self.train
    }

    pub fn test_set(&self) -> &PreparedSet {
        &self.test
    }

    /// Mean loss and gradient over the given training indices.
    pub fn batch_gradient(&self, batch: &[usize]) -> Result<(f64, Gradients)> {
        let chunks: Vec<&[usize]> = batch.chunks(CHUNK).collect();
        let run = |chunk: &[usize]| -> Result<(f64, Gradients)> {
            let mut sum = ModelParams::zeros_like(&self.state.params);
            let mut total = 0.0;
            for &i in chunk {
                let (l, g) = loss_and_gradients_from_input(
                    &self.train.inputs[i],
                    self.train.v0[i],
                    &self.train.truths[i],
                    &self.state.params,
                    &self.config,
                )?;
                total += l;
                for (a, b) in sum.values_mut().iter_mut().zip(g.values()) {
                    *a += b;
                }
            }
            Ok((total, sum))
        };
        let workers = self.tcfg.worker_count().min(chunks.len()).max(1);
        let partials: Vec<Result<(f64, Gradients)>> = if workers == 1 {
            chunks.iter().map(|c| run(c)).collect()
        } else {
            let mut slots: Vec<Option<Result<(f64, Gradients)>>> = (0..chunks.len()).map(|_| None).collect();
            std::thread::scope(|scope| {
                let per_worker = chunks.len().div_ceil(workers);
                for (slot_group, chunk_group) in slots.chunks_mut(per_worker).zip(chunks.chunks(per_worker)) {
                    let run = &run;
                    scope.spawn(move || {
                        for (slot, chunk) in slot_group.iter_mut().zip(chunk_group) {
                            *slot = Some(run(chunk));
                        }
                    });
                }
            });
            slots.into_iter().map(|s| s.expect("worker finished")).collect()
        };
        let mut total = 0.0;
        let mut grad = ModelParams::zeros_like(&self.state.params);
        for partial in partials {
            let (l, g) = partial?;
            total += l;
            for (a, b) in grad.values_mut().iter_mut().zip(g.values()) {
                *a += b;
            }
        }
        let n = batch.len() as f64;
        for v in grad.values_mut() {
            *v /= n;
        }
        Ok((total / n, grad))
    }

    /// One Adam update on the given training indices; returns the batch
    /// loss before the update.
    pub fn step(&mut self, batch: &[usize]) -> Result<f64> {
        let (l, grad) = self.batch_gradient(batch)?;
        adam_step(&mut self.state.params, &grad, &mut self.state.adam, &self.tcfg)?;
        Ok(l)
    }

    /// One shuffled pass over the training set followed by evaluation.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.state.epochs_completed;
        let mut rng = ChaCha8Rng::seed_from_u64(self.tcfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(self.tcfg.batch_size).enumerate() {
            let diverged = GftnnError::Diverged { epoch, batch: b };
            match self.step(batch) {
                Ok(l) if l.is_finite() => {}
                Ok(_) | Err(GftnnError::Numeric { .. }) => return Err(diverged),
                Err(e) => return Err(e),
            }
            if self.state.params.values().iter().any(|v| !v.is_finite()) {
                return Err(diverged);
            }
        }
        self.state.epochs_completed += 1;
        let (train_loss, _, _) = self
            .train
            .evaluate(&self.state.params, &self.config)?
            .expect("training set is not empty");
        let (test_loss, ade, fde) = self
            .test
            .evaluate(&self.state.params, &self.config)?
            .unwrap_or((f64::NAN, f64::NAN, f64::NAN));
        Ok(EpochLog {
            epoch: self.state.epochs_completed,
            train_loss,
            test_loss,
            ade,
            fde,
        })
    }
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub basis: ProductBasis,
    pub log: Vec<EpochLog>,
}

/// Trains until `tcfg.epochs` epochs are completed in total, calling
/// `on_epoch` after each.
pub fn train(
    split: &DatasetSplit,
    config: &ModelConfig,
    tcfg: &TrainConfig,
    resume: Option<TrainState>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(split, config, tcfg, resume)?;
    let mut log = Vec::new();
    while trainer.state.epochs_completed < tcfg.epochs {
        let entry = trainer.run_epoch()?;
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome {
        basis: trainer.basis,
        state: trainer.state,
        log,
    })
}
