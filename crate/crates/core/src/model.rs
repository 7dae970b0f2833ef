//! Encoder and descriptive decoder.
//!
//! The encoder gates the truncated spectrum element-wise, runs each feature
//! channel through its own MLP block (layer norm, linear, GELU, linear),
//! concatenates the block outputs and maps them through a sigmoid and a
//! linear head to three latent values. The decoder turns those into a
//! constant-acceleration longitudinal profile and an anchored logistic
//! lateral profile.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GftnnError, Result};
use crate::graph::{apply_inverse_distance_weights, build_line_graph, build_mesh_graph, build_spider_graph, laplacian};
use crate::eigen::eigendecompose;
use crate::scenario::{Scenario, VX, VY};
use crate::spectral::{gft_extended, truncate_spectrum, ProductBasis};

/// Layer norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Size of the latent state: acceleration, lateral amplitude, logistic rate.
pub const LATENT_DIM: usize = 3;
/// The target vehicle's spatial node.
pub const HUB_INDEX: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Spider,
    Mesh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "gftnn")]
    Gftnn,
    #[serde(rename = "gftnn-w")]
    GftnnW,
    #[serde(rename = "gftnn-rdcby5")]
    GftnnRdcBy5,
    #[serde(rename = "gftnn-rdcby15")]
    GftnnRdcBy15,
    #[serde(rename = "custom")]
    Custom,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Gftnn => "gftnn",
            Preset::GftnnW => "gftnn-w",
            Preset::GftnnRdcBy5 => "gftnn-rdcby5",
            Preset::GftnnRdcBy15 => "gftnn-rdcby15",
            Preset::Custom => "custom",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = GftnnError;

    fn from_str(s: &str) -> Result<Preset> {
        [
            Preset::Gftnn,
            Preset::GftnnW,
            Preset::GftnnRdcBy5,
            Preset::GftnnRdcBy15,
            Preset::Custom,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| GftnnError::Config(format!("unknown preset `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Feature channels fed to the transform (4: positions and velocities,
    /// 2: velocities only).
    pub n_features: usize,
    pub t_obs: usize,
    pub t_pred: usize,
    pub n_vehicles: usize,
    /// Retained temporal eigenpairs.
    pub p: usize,
    pub hidden: usize,
    pub block_out: usize,
    pub n_blocks: usize,
    pub graph_kind: GraphKind,
    pub weighted: bool,
    pub fps: f64,
}

impl ModelConfig {
    /// One of the named configurations, sized for the given data.
    pub fn preset(preset: Preset, fps: f64, t_obs: usize, t_pred: usize, n_vehicles: usize) -> Result<ModelConfig> {
        let base = ModelConfig {
            n_features: 4,
            t_obs,
            t_pred,
            n_vehicles,
            p: t_obs,
            hidden: 50,
            block_out: 3,
            n_blocks: 1,
            graph_kind: GraphKind::Spider,
            weighted: false,
            fps,
        };
        let config = match preset {
            Preset::Gftnn | Preset::Custom => base,
            Preset::GftnnW => ModelConfig {
                n_features: 2,
                weighted: true,
                ..base
            },
            Preset::GftnnRdcBy5 => ModelConfig {
                p: (t_obs / 5).max(1),
                ..base
            },
            Preset::GftnnRdcBy15 => ModelConfig {
                p: (t_obs / 15).max(1),
                ..base
            },
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(GftnnError::Config(m));
        if self.n_features != 2 && self.n_features != 4 {
            return fail(format!("n_features must be 2 or 4, got {}", self.n_features));
        }
        if self.t_obs < 2 || self.n_vehicles < 2 || self.t_pred < 1 {
            return fail(format!(
                "degenerate shape t_obs={} t_pred={} n_vehicles={}",
                self.t_obs, self.t_pred, self.n_vehicles
            ));
        }
        if self.p < 1 || self.p > self.t_obs {
            return fail(format!("p = {} outside [1, {}]", self.p, self.t_obs));
        }
        if self.p * self.n_vehicles < 2 {
            return fail("layer norm needs at least 2 inputs per feature".into());
        }
        if self.hidden < 1 || self.block_out < 1 || self.n_blocks < 1 {
            return fail("hidden, block_out and n_blocks must be positive".into());
        }
        if self.n_blocks > 1 && self.block_out != self.block_input() {
            return fail(format!(
                "stacked blocks need block_out == p * n_vehicles = {}",
                self.block_input()
            ));
        }
        if self.weighted && self.graph_kind != GraphKind::Spider {
            return fail("inverse-distance weighting needs a spider graph".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return fail(format!("fps must be positive, got {}", self.fps));
        }
        Ok(())
    }

    /// Per-feature input length `p · N_V`.
    pub fn block_input(&self) -> usize {
        self.p * self.n_vehicles
    }

    /// Total encoder input length `Z = K · p · N_V`.
    pub fn spectrum_len(&self) -> usize {
        self.n_features * self.block_input()
    }

    /// Scenario channels used as transform input.
    pub fn feature_channels(&self) -> Vec<usize> {
        if self.n_features == 2 {
            vec![VX, VY]
        } else {
            (0..4).collect()
        }
    }

    fn spatial_graph(&self) -> Result<crate::graph::Graph> {
        match self.graph_kind {
            GraphKind::Spider => build_spider_graph(self.n_vehicles, HUB_INDEX),
            GraphKind::Mesh => build_mesh_graph(self.n_vehicles),
        }
    }

    /// Basis of the unweighted product graph; fixed for the configuration.
    pub fn static_basis(&self) -> Result<ProductBasis> {
        ProductBasis::from_graphs(&build_line_graph(self.t_obs)?, &self.spatial_graph()?)
    }

    /// Basis to use for `scenario`: the static one, or for weighted models
    /// the spatial factor re-weighted by the participants' distances to the
    /// target at `t0`.
    pub fn scenario_basis<'a>(&self, basis: &'a ProductBasis, scenario: &Scenario) -> Result<Cow<'a, ProductBasis>> {
        if !self.weighted {
            return Ok(Cow::Borrowed(basis));
        }
        let weighted = apply_inverse_distance_weights(
            &self.spatial_graph()?,
            &scenario.positions_at_t0(),
            HUB_INDEX,
        )?;
        Ok(Cow::Owned(ProductBasis {
            temporal: basis.temporal.clone(),
            spatial: eigendecompose(&laplacian(&weighted))?,
        }))
    }

    pub fn check_scenario(&self, scenario: &Scenario) -> Result<()> {
        if scenario.t_obs() != self.t_obs
            || scenario.t_pred() != self.t_pred
            || scenario.n_vehicles() != self.n_vehicles
        {
            return Err(GftnnError::Dimension(format!(
                "scenario {} is {}x{}x{} (t_obs x t_pred x vehicles), model expects {}x{}x{}",
                scenario.id,
                scenario.t_obs(),
                scenario.t_pred(),
                scenario.n_vehicles(),
                self.t_obs,
                self.t_pred,
                self.n_vehicles
            )));
        }
        if scenario.fps != self.fps {
            return Err(GftnnError::Config(format!(
                "scenario {} is sampled at {} Hz, model at {} Hz",
                scenario.id, scenario.fps, self.fps
            )));
        }
        Ok(())
    }
}

/// Named region of the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    /// `[rows, cols]` for matrices, `[len]` for vectors.
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BlockOffsets {
    w_n: usize,
    b_n: usize,
    w_l: usize,
    b_l: usize,
    input: usize,
    hidden: usize,
    out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    gate: usize,
    blocks: Vec<Vec<BlockOffsets>>,
    head_w: usize,
    head_b: usize,
    len: usize,
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> ParamLayout {
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let start = offset;
            offset += shape.iter().product::<usize>();
            segments.push(Segment {
                name,
                offset: start,
                shape,
            });
            start
        };
        let gate = push("gate".into(), vec![config.spectrum_len()]);
        let mut blocks = Vec::with_capacity(config.n_features);
        for k in 0..config.n_features {
            let mut stack = Vec::with_capacity(config.n_blocks);
            for r in 0..config.n_blocks {
                let input = if r == 0 { config.block_input() } else { config.block_out };
                let (hidden, out) = (config.hidden, config.block_out);
                let prefix = format!("feature{k}.block{r}");
                stack.push(BlockOffsets {
                    w_n: push(format!("{prefix}.w_n"), vec![hidden, input]),
                    b_n: push(format!("{prefix}.b_n"), vec![hidden]),
                    w_l: push(format!("{prefix}.w_l"), vec![out, hidden]),
                    b_l: push(format!("{prefix}.b_l"), vec![out]),
                    input,
                    hidden,
                    out,
                });
            }
            blocks.push(stack);
        }
        let concat = config.n_features * config.block_out;
        let head_w = push("head.w".into(), vec![LATENT_DIM, concat]);
        let head_b = push("head.b".into(), vec![LATENT_DIM]);
        ParamLayout {
            segments,
            gate,
            blocks,
            head_w,
            head_b,
            len: offset,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// All learnable parameters as one flat vector with named segments.
///
/// Gradients and Adam moments use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layout: Arc<ParamLayout>,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> ModelParams {
        let layout = Arc::new(ParamLayout::new(config));
        let values = vec![0.0; layout.len()];
        ModelParams { layout, values }
    }

    pub fn zeros_like(other: &ModelParams) -> ModelParams {
        ModelParams {
            layout: Arc::clone(&other.layout),
            values: vec![0.0; other.values.len()],
        }
    }

    /// Weights `U[−1/√fan_in, 1/√fan_in]`, biases zero, gate ones.
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> ModelParams {
        let mut params = ModelParams::zeros(config);
        let layout = Arc::clone(&params.layout);
        for seg in layout.segments() {
            let slice = &mut params.values[seg.range()];
            if seg.name == "gate" {
                slice.fill(1.0);
            } else if seg.shape.len() == 2 {
                let bound = 1.0 / (seg.shape[1] as f64).sqrt();
                for v in slice {
                    *v = rng.gen_range(-bound..bound);
                }
            }
        }
        params
    }

    /// Rebuilds parameters from `(name, values)` pairs; every segment of the
    /// layout must be present with the right length.
    pub fn from_named(config: &ModelConfig, named: &[(String, Vec<f64>)]) -> Result<ModelParams> {
        let mut params = ModelParams::zeros(config);
        let layout = Arc::clone(&params.layout);
        if named.len() != layout.segments().len() {
            return Err(GftnnError::Checkpoint(format!(
                "{} parameter arrays, layout has {}",
                named.len(),
                layout.segments().len()
            )));
        }
        for seg in layout.segments() {
            let (_, values) = named
                .iter()
                .find(|(n, _)| n == &seg.name)
                .ok_or_else(|| GftnnError::Checkpoint(format!("missing parameter `{}`", seg.name)))?;
            if values.len() != seg.len() {
                return Err(GftnnError::Checkpoint(format!(
                    "parameter `{}` has {} values, expected {}",
                    seg.name,
                    values.len(),
                    seg.len()
                )));
            }
            params.values[seg.range()].copy_from_slice(values);
        }
        Ok(params)
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|s| &self.values[s.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.segment(name)?.range();
        Some(&mut self.values[range])
    }

    pub fn named(&self) -> impl Iterator<Item = (&Segment, &[f64])> {
        self.layout
            .segments()
            .iter()
            .map(move |s| (s, &self.values[s.range()]))
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }
}

/// Latent state: longitudinal acceleration (m/s²), lateral amplitude (m),
/// logistic rate (1/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentState {
    pub h_z: [f64; LATENT_DIM],
}

impl LatentState {
    pub fn new(accel: f64, amplitude: f64, rate: f64) -> LatentState {
        LatentState {
            h_z: [accel, amplitude, rate],
        }
    }

    pub fn accel(&self) -> f64 {
        self.h_z[0]
    }

    pub fn amplitude(&self) -> f64 {
        self.h_z[1]
    }

    pub fn rate(&self) -> f64 {
        self.h_z[2]
    }
}

/// Predicted or observed positions at steps `0..=T_pred`, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn last(&self) -> Option<(f64, f64)> {
        Some((*self.x.last()?, *self.y.last()?))
    }
}

pub fn spectral_gate(s: &[f64], w_s: &[f64]) -> Result<Vec<f64>> {
    if s.len() != w_s.len() {
        return Err(GftnnError::Dimension(format!(
            "spectrum has {} entries, gate {}",
            s.len(),
            w_s.len()
        )));
    }
    Ok(s.iter().zip(w_s).map(|(a, b)| a * b).collect())
}

/// `(v − mean) / sqrt(var + ε)` with population variance and no affine terms.
pub fn layer_norm(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(GftnnError::Contract(format!(
            "layer norm needs at least 2 values, got {}",
            v.len()
        )));
    }
    Ok(layer_norm_with_scale(v).0)
}

fn layer_norm_with_scale(v: &[f64]) -> (Vec<f64>, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    (v.iter().map(|x| (x - mean) * inv_std).collect(), inv_std)
}

/// Exact GELU `x · Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// `Φ(x) + x · φ(x)`.
pub fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `W · x + b` for a row-major `W` of `b.len()` rows.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(i, bias)| {
            w[i * cols..(i + 1) * cols]
                .iter()
                .zip(x)
                .map(|(a, c)| a * c)
                .sum::<f64>()
                + bias
        })
        .collect()
}

/// Intermediate values of one MLP block, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct BlockTrace {
    pub normed: Vec<f64>,
    pub inv_std: f64,
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderTrace {
    pub spectrum: Vec<f64>,
    pub blocks: Vec<Vec<BlockTrace>>,
    pub squashed: Vec<f64>,
    pub latent: LatentState,
}

/// One MLP block applied to a single feature slice.
pub fn mlp_block(input: &[f64], params: &ModelParams, feature: usize, repetition: usize) -> Result<Vec<f64>> {
    let offsets = params
        .layout
        .blocks
        .get(feature)
        .and_then(|s| s.get(repetition))
        .ok_or_else(|| GftnnError::Dimension(format!("no block {repetition} for feature {feature}")))?;
    if input.len() != offsets.input {
        return Err(GftnnError::Dimension(format!(
            "block input has {} values, expected {}",
            input.len(),
            offsets.input
        )));
    }
    Ok(run_block(input, &params.values, offsets).0)
}

fn run_block(input: &[f64], values: &[f64], o: &BlockOffsets) -> (Vec<f64>, BlockTrace) {
    let (normed, inv_std) = layer_norm_with_scale(input);
    let pre = affine(
        &values[o.w_n..o.w_n + o.hidden * o.input],
        &values[o.b_n..o.b_n + o.hidden],
        &normed,
    );
    let act: Vec<f64> = pre.iter().map(|&x| gelu(x)).collect();
    let out = affine(
        &values[o.w_l..o.w_l + o.out * o.hidden],
        &values[o.b_l..o.b_l + o.out],
        &act,
    );
    (
        out,
        BlockTrace {
            normed,
            inv_std,
            pre,
            act,
        },
    )
}

pub(crate) fn encode_traced(s: &[f64], params: &ModelParams, config: &ModelConfig) -> Result<EncoderTrace> {
    let layout = &params.layout;
    if s.len() != config.spectrum_len() || layout.len != params.values.len() {
        return Err(GftnnError::Dimension(format!(
            "spectrum has {} entries, model expects {}",
            s.len(),
            config.spectrum_len()
        )));
    }
    if layout.blocks.len() != config.n_features {
        return Err(GftnnError::Dimension("parameters do not match the configuration".into()));
    }
    let gated = spectral_gate(s, &params.values[layout.gate..layout.gate + s.len()])?;
    let zk = config.block_input();
    let mut concat = Vec::with_capacity(config.n_features * config.block_out);
    let mut blocks = Vec::with_capacity(config.n_features);
    for (k, stack) in layout.blocks.iter().enumerate() {
        let mut h = gated[k * zk..(k + 1) * zk].to_vec();
        let mut traces = Vec::with_capacity(stack.len());
        for o in stack {
            let (out, trace) = run_block(&h, &params.values, o);
            traces.push(trace);
            h = out;
        }
        concat.extend_from_slice(&h);
        blocks.push(traces);
    }
    if concat.iter().any(|v| !v.is_finite()) {
        return Err(GftnnError::Numeric {
            layer: "mlp block".into(),
        });
    }
    let squashed: Vec<f64> = concat.iter().map(|&v| sigmoid(v)).collect();
    let head = affine(
        &params.values[layout.head_w..layout.head_w + LATENT_DIM * squashed.len()],
        &params.values[layout.head_b..layout.head_b + LATENT_DIM],
        &squashed,
    );
    if head.iter().any(|v| !v.is_finite()) {
        return Err(GftnnError::Numeric {
            layer: "head".into(),
        });
    }
    Ok(EncoderTrace {
        spectrum: s.to_vec(),
        blocks,
        squashed,
        latent: LatentState::new(head[0], head[1], head[2]),
    })
}

/// Maps a truncated spectrum to the latent state.
pub fn encode(s: &[f64], params: &ModelParams, config: &ModelConfig) -> Result<LatentState> {
    Ok(encode_traced(s, params, config)?.latent)
}

/// `1 / (1 + e^z)` without overflow.
fn falling_logistic(z: f64) -> f64 {
    sigmoid(-z)
}

/// Time grid `t_i = i / fps` for `i = 0..=t_pred`, seconds.
pub fn time_grid(t_pred: usize, fps: f64) -> Vec<f64> {
    (0..=t_pred).map(|i| i as f64 / fps).collect()
}

/// Closed-form trajectory for a latent state.
///
/// `x(t) = v0·t + ½·a·t²`, `y(t) = A/(1 + e^{r·τ}) − A/(1 + e^{r·τ0})` with
/// `τ = t − T/2` and `τ0 = −T/2`, `T` the horizon in seconds.
pub fn decode(h_z: &LatentState, v0: f64, t_pred: usize, fps: f64) -> Trajectory {
    let horizon = t_pred as f64 / fps;
    let tau0 = -0.5 * horizon;
    let anchor = h_z.amplitude() * falling_logistic(h_z.rate() * tau0);
    let times = time_grid(t_pred, fps);
    let x = times
        .iter()
        .map(|&t| v0 * t + 0.5 * h_z.accel() * t * t)
        .collect();
    let y = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if i == 0 {
                // τ = τ0 at t = 0; keep the anchor exact
                0.0
            } else {
                h_z.amplitude() * falling_logistic(h_z.rate() * (t - 0.5 * horizon)) - anchor
            }
        })
        .collect();
    Trajectory { x, y }
}

/// Partial derivatives of the decoded trajectory with respect to `h_z`.
#[derive(Debug, Clone)]
pub struct DecoderJacobian {
    /// `∂x_i/∂h_z1 = ½·t_i²`.
    pub dx_daccel: Vec<f64>,
    /// `∂y_i/∂h_z2`.
    pub dy_damplitude: Vec<f64>,
    /// `∂y_i/∂h_z3`.
    pub dy_drate: Vec<f64>,
}

pub fn decode_jacobian(h_z: &LatentState, t_pred: usize, fps: f64) -> DecoderJacobian {
    let horizon = t_pred as f64 / fps;
    let tau0 = -0.5 * horizon;
    let (a, r) = (h_z.amplitude(), h_z.rate());
    // d/dr [1/(1+e^{rτ})] = −τ·S·(1 − S)
    let ds_dr = |tau: f64| {
        let s = falling_logistic(r * tau);
        -tau * s * (1.0 - s)
    };
    let s0 = falling_logistic(r * tau0);
    let ds0 = ds_dr(tau0);
    let times = time_grid(t_pred, fps);
    let mut dy_damplitude = Vec::with_capacity(times.len());
    let mut dy_drate = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        if i == 0 {
            dy_damplitude.push(0.0);
            dy_drate.push(0.0);
            continue;
        }
        let tau = t - 0.5 * horizon;
        dy_damplitude.push(falling_logistic(r * tau) - s0);
        dy_drate.push(a * (ds_dr(tau) - ds0));
    }
    DecoderJacobian {
        dx_daccel: times.iter().map(|t| 0.5 * t * t).collect(),
        dy_damplitude,
        dy_drate,
    }
}

/// Truncated spectrum of a scenario under the model's graph definition.
pub fn spectral_input(scenario: &Scenario, basis: &ProductBasis, config: &ModelConfig) -> Result<Vec<f64>> {
    config.check_scenario(scenario)?;
    let basis = config.scenario_basis(basis, scenario)?;
    let features = scenario.features.select_channels(&config.feature_channels())?;
    truncate_spectrum(&gft_extended(&features, &basis)?, config.p)
}

/// Full pipeline: transform, encode, decode.
pub fn predict(scenario: &Scenario, basis: &ProductBasis, params: &ModelParams, config: &ModelConfig) -> Result<Trajectory> {
    let s = spectral_input(scenario, basis, config)?;
    let latent = encode(&s, params, config)?;
    Ok(decode(&latent, scenario.v0, config.t_pred, config.fps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::synthesize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_features: 2,
            t_obs: 6,
            t_pred: 10,
            n_vehicles: 3,
            p: 6,
            hidden: 4,
            block_out: 3,
            n_blocks: 1,
            graph_kind: GraphKind::Spider,
            weighted: false,
            fps: 2.0,
        }
    }

    #[test]
    fn gate_examples() {
        assert_eq!(spectral_gate(&[1.0, 2.0], &[1.0, 1.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(spectral_gate(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(spectral_gate(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), vec![3.0, 8.0]);
        assert!(spectral_gate(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        assert_eq!(layer_norm(&[2.5; 4]).unwrap(), vec![0.0; 4]);
        let out = layer_norm(&[1.0, -1.0]).unwrap();
        let expected = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((out[0] - expected).abs() < 1e-15);
        assert!((out[1] + expected).abs() < 1e-15);
        assert!((out[0] - 0.999995).abs() < 1e-6);
        let v = [3.0, -7.5, 0.25, 11.0, 4.0];
        let mean: f64 = layer_norm(&v).unwrap().iter().sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-12);
        assert!(matches!(layer_norm(&[1.0]), Err(GftnnError::Contract(_))));
    }

    #[test]
    fn gelu_asymptotes() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-12);
        assert!(gelu(-10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_bias() {
        let config = tiny();
        let mut params = ModelParams::zeros(&config);
        params.segment_mut("feature1.block0.b_l").unwrap().copy_from_slice(&[0.5, -1.0, 2.0]);
        let input: Vec<f64> = (0..18).map(|i| i as f64).collect();
        assert_eq!(mlp_block(&input, &params, 1, 0).unwrap(), vec![0.5, -1.0, 2.0]);
        assert!(mlp_block(&input[..5], &params, 1, 0).is_err());

        params.segment_mut("head.b").unwrap().copy_from_slice(&[0.1, 0.2, 0.3]);
        let latent = encode(&vec![0.0; 36], &params, &config).unwrap();
        assert_eq!(latent.h_z, [0.1, 0.2, 0.3]);
    }

    /// Straight-line re-implementation of one block, written without the
    /// flat-vector offsets.
    fn reference_block(input: &[f64], w_n: &[f64], b_n: &[f64], w_l: &[f64], b_l: &[f64]) -> Vec<f64> {
        let n = input.len() as f64;
        let mean = input.iter().sum::<f64>() / n;
        let var = input.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let normed: Vec<f64> = input.iter().map(|x| (x - mean) / (var + 1e-5).sqrt()).collect();
        let hidden = b_n.len();
        let mut act = vec![0.0; hidden];
        for h in 0..hidden {
            let mut z = b_n[h];
            for (i, x) in normed.iter().enumerate() {
                z += w_n[h * normed.len() + i] * x;
            }
            act[h] = z * 0.5 * (1.0 + libm::erf(z / 2f64.sqrt()));
        }
        let mut out = b_l.to_vec();
        for (o, v) in out.iter_mut().enumerate() {
            for h in 0..hidden {
                *v += w_l[o * hidden + h] * act[h];
            }
        }
        out
    }

    #[test]
    fn block_matches_reference() {
        let config = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = ModelParams::init(&config, &mut rng);
        for v in params.values_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
        let input: Vec<f64> = (0..18).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let seg = |n: &str| params.segment(&format!("feature0.block0.{n}")).unwrap().to_vec();
        let expected = reference_block(&input, &seg("w_n"), &seg("b_n"), &seg("w_l"), &seg("b_l"));
        let actual = mlp_block(&input, &params, 0, 0).unwrap();
        for (a, e) in actual.iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn swapping_features_and_parameters_is_invisible() {
        let config = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = ModelParams::init(&config, &mut rng);
        for v in params.segment_mut("gate").unwrap() {
            *v = rng.gen_range(0.5..1.5);
        }
        let s: Vec<f64> = (0..36).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let before = encode(&s, &params, &config).unwrap();

        let mut swapped_s = s[18..].to_vec();
        swapped_s.extend_from_slice(&s[..18]);
        let mut swapped = params.clone();
        let gate = params.segment("gate").unwrap().to_vec();
        let g = swapped.segment_mut("gate").unwrap();
        g[..18].copy_from_slice(&gate[18..]);
        g[18..].copy_from_slice(&gate[..18]);
        for name in ["w_n", "b_n", "w_l", "b_l"] {
            let a = params.segment(&format!("feature0.block0.{name}")).unwrap().to_vec();
            let b = params.segment(&format!("feature1.block0.{name}")).unwrap().to_vec();
            swapped.segment_mut(&format!("feature0.block0.{name}")).unwrap().copy_from_slice(&b);
            swapped.segment_mut(&format!("feature1.block0.{name}")).unwrap().copy_from_slice(&a);
        }
        let head = params.segment("head.w").unwrap().to_vec();
        let hw = swapped.segment_mut("head.w").unwrap();
        for row in 0..3 {
            for c in 0..3 {
                hw[row * 6 + c] = head[row * 6 + 3 + c];
                hw[row * 6 + 3 + c] = head[row * 6 + c];
            }
        }
        let after = encode(&swapped_s, &swapped, &config).unwrap();
        for i in 0..3 {
            assert!((before.h_z[i] - after.h_z[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn preset_shapes() {
        let c = ModelConfig::preset(Preset::Gftnn, 25.0, 75, 125, 9).unwrap();
        assert_eq!((c.n_features, c.p, c.spectrum_len()), (4, 75, 2700));
        let w = ModelConfig::preset(Preset::GftnnW, 25.0, 75, 125, 9).unwrap();
        assert_eq!((w.n_features, w.weighted, w.p), (2, true, 75));
        assert_eq!(ModelConfig::preset(Preset::GftnnRdcBy5, 25.0, 75, 125, 9).unwrap().p, 15);
        assert_eq!(ModelConfig::preset(Preset::GftnnRdcBy15, 25.0, 75, 125, 9).unwrap().p, 5);
        assert_eq!(ModelConfig::preset(Preset::GftnnRdcBy15, 10.0, 30, 50, 9).unwrap().p, 2);
        assert_eq!(ModelConfig::preset(Preset::GftnnRdcBy5, 10.0, 30, 50, 9).unwrap().p, 6);

        let params = ModelParams::zeros(&c);
        // h_c has K · 3 entries
        assert_eq!(params.layout().segment("head.w").unwrap().shape, vec![3, 12]);
        let small = ModelParams::zeros(&ModelConfig::preset(Preset::GftnnRdcBy15, 25.0, 75, 125, 9).unwrap());
        assert!(small.len() < params.len());
    }

    #[test]
    fn decoder_examples() {
        let v0 = 30.0;
        let traj = decode(&LatentState::new(0.0, 0.0, 1.7), v0, 125, 25.0);
        assert_eq!(traj.len(), 126);
        for (i, (&x, &y)) in traj.x.iter().zip(&traj.y).enumerate() {
            assert!((x - v0 * i as f64 / 25.0).abs() < 1e-12);
            assert_eq!(y, 0.0);
        }
        let traj = decode(&LatentState::new(1.0, 0.0, -4.0), v0, 50, 10.0);
        assert_eq!(traj.x[20], 62.0);
        assert!(traj.y.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn decoder_is_anchored_monotone_and_bounded() {
        for &(a, r) in &[(3.5, 2.0), (-3.5, 1.0), (2.0, -1.5), (1e3, 40.0), (-0.1, 1e-3)] {
            let traj = decode(&LatentState::new(0.7, a, r), 25.0, 50, 10.0);
            assert_eq!((traj.x[0], traj.y[0]), (0.0, 0.0));
            let diffs: Vec<f64> = traj.y.windows(2).map(|w| w[1] - w[0]).collect();
            assert!(diffs.iter().all(|d| *d >= -1e-12) || diffs.iter().all(|d| *d <= 1e-12));
            assert!(traj.y.iter().all(|y| y.abs() <= a.abs() + 1e-9));
        }
    }

    #[test]
    fn negated_rate_mirrors_in_time() {
        // S_{-r}(τ) = S_r(−τ) and τ(T − t) = −τ(t); with the anchors removed,
        // negating the rate reverses the profile in time.
        let (amp, rate, n, fps) = (3.5, 1.3, 50, 10.0);
        let horizon = n as f64 / fps;
        let unanchored = |r: f64, t: f64| amp / (1.0 + (r * (t - 0.5 * horizon)).exp());
        let pos = decode(&LatentState::new(0.0, amp, rate), 0.0, n, fps);
        let neg = decode(&LatentState::new(0.0, amp, -rate), 0.0, n, fps);
        let anchor = |r: f64| amp / (1.0 + (r * -0.5 * horizon).exp());
        for i in 1..n {
            let a = neg.y[i] + anchor(-rate);
            let b = pos.y[n - i] + anchor(rate);
            assert!((a - unanchored(-rate, i as f64 / fps)).abs() < 1e-12);
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn accel_derivative_is_half_t_squared() {
        let jac = decode_jacobian(&LatentState::new(0.3, 2.0, 1.0), 50, 10.0);
        for (i, d) in jac.dx_daccel.iter().enumerate() {
            let t = i as f64 / 10.0;
            assert_eq!(*d, 0.5 * t * t);
        }
    }

    #[test]
    fn predict_is_deterministic_and_finite() {
        let config = ModelConfig::preset(Preset::Gftnn, 10.0, 30, 50, 9).unwrap();
        let basis = config.static_basis().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = ModelParams::init(&config, &mut rng);
        let scenarios = synthesize(3, 10.0, 4, 0.0);
        let a = predict(&scenarios[0], &basis, &params, &config).unwrap();
        let b = predict(&scenarios[0], &basis, &params, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 51);
        assert!(a.x.iter().chain(&a.y).all(|v| v.is_finite()));

        let mut wrong = scenarios[0].clone();
        wrong.fps = 25.0;
        assert!(predict(&wrong, &basis, &params, &config).is_err());
    }

    #[test]
    fn all_zero_scenario_uses_biases_only() {
        let config = ModelConfig::preset(Preset::Gftnn, 10.0, 30, 50, 9).unwrap();
        let basis = config.static_basis().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = ModelParams::init(&config, &mut rng);
        let mut s = synthesize(1, 10.0, 0, 0.0).remove(0);
        s.features = crate::spectral::FeatureTensor::zeros(4, 30, 9);
        s.v0 = 0.0;
        // zero spectrum → layer norm output zero → block output = b_l = 0,
        // sigmoid(0) = ½ → h_z = ½ · Σ_j W_h[·, j] + b_h
        let w = params.segment("head.w").unwrap();
        let accel: f64 = 0.5 * w[..12].iter().sum::<f64>();
        let traj = predict(&s, &basis, &params, &config).unwrap();
        for (i, x) in traj.x.iter().enumerate() {
            let t = i as f64 / 10.0;
            assert!((x - 0.5 * accel * t * t).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_basis_depends_on_positions() {
        let config = ModelConfig::preset(Preset::GftnnW, 10.0, 30, 50, 9).unwrap();
        let basis = config.static_basis().unwrap();
        let scenarios = synthesize(2, 10.0, 9, 0.0);
        let a = config.scenario_basis(&basis, &scenarios[0]).unwrap();
        assert_ne!(a.spatial, basis.spatial);
        assert_eq!(a.temporal, basis.temporal);
        let s = spectral_input(&scenarios[1], &basis, &config).unwrap();
        assert_eq!(s.len(), 2 * 30 * 9);
    }
}
