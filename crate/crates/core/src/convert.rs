//! Float-to-integer conversion: parameter scaling and per-layer threshold
//! calibration through a rate-based forward pass over a calibration set.
//!
//! For every layer in order, biases are first multiplied by the running
//! `slope` (SNN output / ANN output of the previous layer). The layer's
//! `param_scale` is the largest factor keeping both `|w|` and `|b|` within
//! their bit budgets; parameters are scaled and truncated to integers. The
//! rate-domain drive `dvdt = ReLU(w_q · rate_in + b_q)` is evaluated on the
//! calibration set, the threshold is the (truncated) maximum drive, outgoing
//! rates are `min(dvdt / threshold, 1)` and the slope is multiplied by
//! `param_scale / threshold`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ann::{weight_shape, AnnModel};
use crate::arch::{Architecture, LayerKind, LayerSpec, Shape};
use crate::dataset::LabeledImages;
use crate::format::{self, BlobWriter, FormatError};

#[derive(Debug, Error)]
pub enum ConvertError {
    #[error("bit width must be between 2 and 31, got {0}")]
    InvalidBits(u32),
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("calibration input has {found} values per sample, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("layer {layer}: non-finite parameter")]
    NonFiniteParam { layer: usize },
    #[error("layer {layer}: both weights and biases are all zero")]
    DegenerateLayer { layer: usize },
    #[error("layer {layer}: parameter count does not match the architecture")]
    ParamShape { layer: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitConfig {
    pub num_weight_bits: u32,
    pub num_bias_bits: u32,
}

impl Default for BitConfig {
    fn default() -> Self {
        Self {
            num_weight_bits: 9,
            num_bias_bits: 9,
        }
    }
}

impl BitConfig {
    pub fn new(num_weight_bits: u32, num_bias_bits: u32) -> Result<Self, ConvertError> {
        for bits in [num_weight_bits, num_bias_bits] {
            if !(2..=31).contains(&bits) {
                return Err(ConvertError::InvalidBits(bits));
            }
        }
        Ok(Self {
            num_weight_bits,
            num_bias_bits,
        })
    }

    /// `2^(num_weight_bits - 1) - 1`
    pub fn w_max(&self) -> i32 {
        ((1i64 << (self.num_weight_bits - 1)) - 1) as i32
    }

    /// `2^(num_bias_bits - 1) - 1`
    pub fn b_max(&self) -> i32 {
        ((1i64 << (self.num_bias_bits - 1)) - 1) as i32
    }
}

/// How scaled float parameters become integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// `int(x)`: truncation toward zero.
    #[default]
    Truncate,
    Nearest,
}

impl Rounding {
    pub fn apply(self, x: f64) -> i32 {
        match self {
            Rounding::Truncate => x.trunc() as i32,
            Rounding::Nearest => x.round() as i32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputEncoding {
    pub param_scale: f64,
    pub threshold: i32,
}

/// Integer parameters and threshold of one spiking layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnnLayer {
    pub weight: Vec<i32>,
    pub bias: Vec<i32>,
    pub threshold: i32,
    pub param_scale: f64,
}

/// Integer spiking twin of an [`AnnModel`].
///
/// Spiking layer 0 encodes the input image; spiking layer `i + 1` mirrors
/// `arch.layers[i]`. `arch.shapes()[l]` is therefore the shape of spiking
/// layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnnModel {
    pub arch: Architecture,
    pub bits: BitConfig,
    pub input: InputEncoding,
    pub layers: Vec<SnnLayer>,
    pub final_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    /// Spiking-layer index (0 = input encoding).
    pub layer: usize,
    pub param_scale: f64,
    pub threshold: i32,
    pub max_dvdt: f64,
    pub mean_spikerate: f64,
    pub slope: f64,
}

/// Running state of the conversion loop.
#[derive(Debug, Clone)]
pub struct ConversionContext {
    pub w_max: i32,
    pub b_max: i32,
    pub slope: f64,
    pub rounding: Rounding,
    pub records: Vec<LayerRecord>,
    samples: usize,
    /// Current calibration spikerates, `samples × layer_width`.
    spikerate: Vec<f64>,
}

pub fn init_context(bits: BitConfig) -> ConversionContext {
    init_context_with(bits, Rounding::Truncate)
}

pub fn init_context_with(bits: BitConfig, rounding: Rounding) -> ConversionContext {
    ConversionContext {
        w_max: bits.w_max(),
        b_max: bits.b_max(),
        slope: 1.0,
        rounding,
        records: Vec::new(),
        samples: 0,
        spikerate: Vec::new(),
    }
}

impl ConversionContext {
    pub fn spikerate(&self) -> &[f64] {
        &self.spikerate
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Sets thresholds, rates and slope from `dvdt` (in place) and records the layer.
    fn finish_layer(&mut self, layer: usize, param_scale: f64, mut dvdt: Vec<f64>) -> i32 {
        let max_dvdt = dvdt.iter().copied().fold(0.0f64, f64::max);
        let threshold = (max_dvdt.trunc() as i64).clamp(1, i32::MAX as i64) as i32;
        self.finish_with_threshold(layer, param_scale, threshold, max_dvdt, &mut dvdt);
        self.spikerate = dvdt;
        threshold
    }

    fn finish_with_threshold(&mut self, layer: usize, param_scale: f64, threshold: i32, max_dvdt: f64, dvdt: &mut [f64]) {
        let t = threshold as f64;
        let mut sum = 0.0;
        for v in dvdt.iter_mut() {
            *v = (*v / t).min(1.0);
            sum += *v;
        }
        self.slope *= param_scale / t;
        self.records.push(LayerRecord {
            layer,
            param_scale,
            threshold,
            max_dvdt,
            mean_spikerate: if dvdt.is_empty() { 0.0 } else { sum / dvdt.len() as f64 },
            slope: self.slope,
        });
    }
}

/// Input layer: `param_scale = W_MAX`, `dvdt = input · param_scale`.
///
/// `inputs` holds `samples` normalized images back to back.
pub fn encode_input_layer(ctx: &mut ConversionContext, inputs: &[f32], samples: usize) -> Result<InputEncoding, ConvertError> {
    if samples == 0 || inputs.is_empty() {
        return Err(ConvertError::EmptyCalibration);
    }
    if inputs.len() % samples != 0 {
        return Err(ConvertError::ShapeMismatch {
            expected: inputs.len() / samples,
            found: inputs.len() % samples,
        });
    }
    let param_scale = ctx.w_max as f64;
    let dvdt: Vec<f64> = inputs.iter().map(|&p| p as f64 * param_scale).collect();
    ctx.samples = samples;
    let threshold = ctx.finish_layer(0, param_scale, dvdt);
    Ok(InputEncoding { param_scale, threshold })
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Scales one weighted layer and calibrates its threshold against the
/// spikerates currently held by `ctx`.
///
/// `layer` is the spiking-layer index used for error reporting.
pub fn scale_layer(
    ctx: &mut ConversionContext,
    layer: usize,
    spec: &LayerSpec,
    input: Shape,
    weight: &[f32],
    bias: &[f32],
) -> Result<SnnLayer, ConvertError> {
    if let LayerKind::AvgPool { window, .. } = spec.kind {
        return Ok(scale_pool(ctx, layer, spec, input, window));
    }
    if weight.len() != spec.weight_len(input) || (!bias.is_empty() && bias.len() != spec.bias_len(input)) {
        return Err(ConvertError::ParamShape { layer });
    }
    if weight.iter().chain(bias).any(|v| !v.is_finite()) {
        return Err(ConvertError::NonFiniteParam { layer });
    }
    let scaled_bias: Vec<f64> = bias.iter().map(|&b| b as f64 * ctx.slope).collect();
    let weight_norm = max_abs(weight.iter().map(|&w| w as f64));
    let bias_norm = max_abs(scaled_bias.iter().copied());
    let ratio = |limit: i32, norm: f64| if norm > 0.0 { limit as f64 / norm } else { f64::INFINITY };
    let param_scale = ratio(ctx.w_max, weight_norm).min(ratio(ctx.b_max, bias_norm));
    if !param_scale.is_finite() {
        return Err(ConvertError::DegenerateLayer { layer });
    }
    let w_q: Vec<i32> = weight
        .iter()
        .map(|&w| ctx.rounding.apply(w as f64 * param_scale))
        .collect();
    let mut b_q: Vec<i32> = scaled_bias
        .iter()
        .map(|&b| ctx.rounding.apply(b * param_scale))
        .collect();
    if b_q.is_empty() {
        b_q = vec![0; spec.bias_len(input)];
    }
    debug_assert!(w_q.iter().all(|w| w.abs() <= ctx.w_max));
    debug_assert!(b_q.iter().all(|b| b.abs() <= ctx.b_max));

    let output = spec.output_shape(input);
    let (in_len, out_len) = (input.len(), output.len());
    let mut dvdt = vec![0.0f64; ctx.samples * out_len];
    for (rates, out) in ctx.spikerate.chunks_exact(in_len).zip(dvdt.chunks_exact_mut(out_len)) {
        rate_drive(spec, input, output, &w_q, &b_q, rates, out);
        for v in out.iter_mut() {
            *v = v.max(0.0);
        }
    }
    let threshold = ctx.finish_layer(layer, param_scale, dvdt);
    Ok(SnnLayer {
        weight: w_q,
        bias: b_q,
        threshold,
        param_scale,
    })
}

/// Average pooling as a spiking layer: unit weights over the window and a
/// threshold equal to the window area, so the outgoing rate is the mean of
/// the incoming rates. The unit integer weight stands for the float weight
/// `1/area` scaled by `param_scale = area`, leaving the slope unchanged.
fn scale_pool(ctx: &mut ConversionContext, layer: usize, spec: &LayerSpec, input: Shape, window: usize) -> SnnLayer {
    let area = (window * window) as i32;
    let weight = vec![1; (window * window) as usize];
    let output = spec.output_shape(input);
    let (in_len, out_len) = (input.len(), output.len());
    let mut dvdt = vec![0.0f64; ctx.samples * out_len];
    for (rates, out) in ctx.spikerate.chunks_exact(in_len).zip(dvdt.chunks_exact_mut(out_len)) {
        rate_drive(spec, input, output, &weight, &[], rates, out);
    }
    let max_dvdt = dvdt.iter().copied().fold(0.0f64, f64::max);
    ctx.finish_with_threshold(layer, area as f64, area, max_dvdt, &mut dvdt);
    ctx.spikerate = dvdt;
    SnnLayer {
        weight,
        bias: Vec::new(),
        threshold: area,
        param_scale: area as f64,
    }
}

/// Pre-ReLU rate-domain drive `w · rates + b` of one layer for one sample.
pub(crate) fn rate_drive(spec: &LayerSpec, input: Shape, output: Shape, weight: &[i32], bias: &[i32], rates: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    match spec.kind {
        LayerKind::Conv {
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let cin = input.channels;
            for iy in 0..input.height {
                for ix in 0..input.width {
                    for ci in 0..cin {
                        let r = rates[input.index(iy, ix, ci)];
                        if r == 0.0 {
                            continue;
                        }
                        for_each_conv_target(iy, ix, kernel, stride, padding, output, |oy, ox, ky, kx| {
                            let w = &weight[((ky * kernel + kx) * cin + ci) * out_channels..][..out_channels];
                            let o = &mut out[output.index(oy, ox, 0)..][..out_channels];
                            for (acc, &wq) in o.iter_mut().zip(w) {
                                *acc += wq as f64 * r;
                            }
                        });
                    }
                }
            }
            for (i, v) in out.iter_mut().enumerate() {
                *v += bias[i % out_channels] as f64;
            }
        }
        LayerKind::AvgPool { window, stride } => {
            let c = input.channels;
            for oy in 0..output.height {
                for ox in 0..output.width {
                    for wy in 0..window {
                        for wx in 0..window {
                            let src = input.index(oy * stride + wy, ox * stride + wx, 0);
                            let w = weight[wy * window + wx] as f64;
                            for ch in 0..c {
                                out[output.index(oy, ox, ch)] += w * rates[src + ch];
                            }
                        }
                    }
                }
            }
        }
        LayerKind::Dense { units } => {
            for (i, &r) in rates.iter().enumerate() {
                if r == 0.0 {
                    continue;
                }
                for (acc, &wq) in out.iter_mut().zip(&weight[i * units..(i + 1) * units]) {
                    *acc += wq as f64 * r;
                }
            }
            for (v, &b) in out.iter_mut().zip(bias) {
                *v += b as f64;
            }
        }
    }
}

/// Calls `f(oy, ox, ky, kx)` for every output position whose receptive
/// field covers input pixel `(iy, ix)` through kernel tap `(ky, kx)`.
#[inline]
pub(crate) fn for_each_conv_target(
    iy: usize,
    ix: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output: Shape,
    mut f: impl FnMut(usize, usize, usize, usize),
) {
    for ky in 0..kernel {
        let ny = iy as isize + padding as isize - ky as isize;
        if ny < 0 || ny % stride as isize != 0 {
            continue;
        }
        let oy = (ny / stride as isize) as usize;
        if oy >= output.height {
            continue;
        }
        for kx in 0..kernel {
            let nx = ix as isize + padding as isize - kx as isize;
            if nx < 0 || nx % stride as isize != 0 {
                continue;
            }
            let ox = (nx / stride as isize) as usize;
            if ox >= output.width {
                continue;
            }
            f(oy, ox, ky, kx);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionReport {
    pub bits: BitConfig,
    pub rounding: Rounding,
    pub calibration_samples: usize,
    pub layers: Vec<LayerRecord>,
    pub final_slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvertConfig {
    pub bits: BitConfig,
    pub rounding: Rounding,
}

impl Default for ConvertConfig {
    fn default() -> Self {
        Self {
            bits: BitConfig::default(),
            rounding: Rounding::Truncate,
        }
    }
}

/// Converts a trained float network using `calibration` images.
pub fn convert(ann: &AnnModel, calibration: &LabeledImages, cfg: &ConvertConfig) -> Result<(SnnModel, ConversionReport), ConvertError> {
    if calibration.is_empty() {
        return Err(ConvertError::EmptyCalibration);
    }
    let expected = ann.arch.input.len();
    if calibration.shape.len() != expected {
        return Err(ConvertError::ShapeMismatch {
            expected,
            found: calibration.shape.len(),
        });
    }
    let mut ctx = init_context_with(cfg.bits, cfg.rounding);
    let input = encode_input_layer(&mut ctx, &calibration.pixels, calibration.len())?;
    let shapes = ann.arch.shapes();
    let mut layers = Vec::with_capacity(ann.arch.layers.len());
    for (i, (spec, params)) in ann.arch.layers.iter().zip(&ann.params).enumerate() {
        layers.push(scale_layer(&mut ctx, i + 1, spec, shapes[i], &params.weight, &params.bias)?);
    }
    let model = SnnModel {
        arch: ann.arch.clone(),
        bits: cfg.bits,
        input,
        layers,
        final_slope: ctx.slope,
    };
    let report = ConversionReport {
        bits: cfg.bits,
        rounding: cfg.rounding,
        calibration_samples: calibration.len(),
        layers: ctx.records,
        final_slope: ctx.slope,
    };
    Ok((model, report))
}

/// Rate-domain forward pass of a converted network.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTrace {
    /// Spikerates of every spiking layer (0 = input encoding).
    pub rates: Vec<Vec<f64>>,
    /// Output-layer `dvdt` after ReLU.
    pub output_dvdt: Vec<f64>,
}

impl RateTrace {
    pub fn class(&self) -> usize {
        crate::ann::argmax(&self.output_dvdt)
    }

    pub fn output_rates(&self) -> &[f64] {
        self.rates.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl SnnModel {
    pub fn num_spiking_layers(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn shapes(&self) -> Vec<Shape> {
        self.arch.shapes()
    }

    /// Threshold of spiking layer `l`.
    pub fn threshold(&self, l: usize) -> i32 {
        if l == 0 {
            self.input.threshold
        } else {
            self.layers[l - 1].threshold
        }
    }

    pub fn w_max(&self) -> i32 {
        self.bits.w_max()
    }

    pub fn rate_forward(&self, image: &[f32]) -> RateTrace {
        let shapes = self.shapes();
        let t0 = self.input.threshold as f64;
        let mut rates = Vec::with_capacity(self.num_spiking_layers());
        rates.push(
            image
                .iter()
                .map(|&p| (p as f64 * self.input.param_scale / t0).min(1.0))
                .collect::<Vec<_>>(),
        );
        let mut output_dvdt = Vec::new();
        for (i, (spec, layer)) in self.arch.layers.iter().zip(&self.layers).enumerate() {
            let mut dvdt = vec![0.0; shapes[i + 1].len()];
            rate_drive(spec, shapes[i], shapes[i + 1], &layer.weight, &layer.bias, &rates[i], &mut dvdt);
            for v in &mut dvdt {
                *v = v.max(0.0);
            }
            let t = layer.threshold as f64;
            rates.push(dvdt.iter().map(|v| (v / t).min(1.0)).collect());
            output_dvdt = dvdt;
        }
        RateTrace { rates, output_dvdt }
    }

    /// Largest possible per-step input current magnitude of spiking layer `l`
    /// (every presynaptic neuron spiking).
    pub fn max_step_current(&self, l: usize) -> i64 {
        if l == 0 {
            return self.w_max() as i64;
        }
        let shapes = self.shapes();
        let spec = &self.arch.layers[l - 1];
        let layer = &self.layers[l - 1];
        let input = shapes[l - 1];
        let max_bias = layer.bias.iter().map(|b| (*b as i64).abs()).max().unwrap_or(0);
        let synaptic = match spec.kind {
            LayerKind::Conv { out_channels, .. } => (0..out_channels)
                .map(|co| {
                    layer
                        .weight
                        .iter()
                        .skip(co)
                        .step_by(out_channels)
                        .map(|w| (*w as i64).abs())
                        .sum::<i64>()
                })
                .max()
                .unwrap_or(0),
            LayerKind::AvgPool { .. } => layer.weight.iter().map(|w| (*w as i64).abs()).sum(),
            LayerKind::Dense { units } => (0..units)
                .map(|u| {
                    (0..input.len())
                        .map(|i| (layer.weight[i * units + u] as i64).abs())
                        .sum::<i64>()
                })
                .max()
                .unwrap_or(0),
        };
        synaptic + max_bias
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ConvertError> {
        let shapes = self.shapes();
        let mut w = BlobWriter::new();
        for (i, (spec, layer)) in self.arch.layers.iter().zip(&self.layers).enumerate() {
            let l = i + 1;
            w.push_i32(&format!("layer{l}.weight"), &weight_shape(spec, shapes[i]), &layer.weight);
            w.push_i32(&format!("layer{l}.bias"), &[layer.bias.len()], &layer.bias);
        }
        let meta = SnnManifest {
            arch: self.arch.name.clone(),
            input_shape: self.arch.input,
            layer_specs: self.arch.layers.clone(),
            bits: self.bits,
            input: self.input,
            layers: self
                .layers
                .iter()
                .map(|l| LayerMeta {
                    threshold: l.threshold,
                    param_scale: l.param_scale,
                })
                .collect(),
            slope: self.final_slope,
        };
        Ok(w.finish(SNNW_KIND, &meta)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ConvertError> {
        let (meta, reader): (SnnManifest, _) = format::decode(SNNW_KIND, bytes)?;
        let arch = Architecture {
            name: meta.arch,
            input: meta.input_shape,
            layers: meta.layer_specs,
        };
        arch.validate()
            .map_err(|e| FormatError::Inconsistent(e.to_string()))?;
        if meta.layers.len() != arch.layers.len() {
            return Err(FormatError::Inconsistent("layer metadata count differs from architecture".into()).into());
        }
        let shapes = arch.shapes();
        let mut layers = Vec::with_capacity(arch.layers.len());
        for (i, (spec, lm)) in arch.layers.iter().zip(&meta.layers).enumerate() {
            let l = i + 1;
            let weight = reader.i32(&format!("layer{l}.weight"))?;
            let bias = reader.i32(&format!("layer{l}.bias"))?;
            let bias_ok = if spec.is_pool() { bias.is_empty() } else { bias.len() == spec.bias_len(shapes[i]) };
            if weight.len() != spec.weight_len(shapes[i]) || !bias_ok {
                return Err(ConvertError::ParamShape { layer: l });
            }
            layers.push(SnnLayer {
                weight,
                bias,
                threshold: lm.threshold,
                param_scale: lm.param_scale,
            });
        }
        Ok(Self {
            arch,
            bits: meta.bits,
            input: meta.input,
            layers,
            final_slope: meta.slope,
        })
    }
}

pub const SNNW_KIND: &str = "snnw";

#[derive(Debug, Serialize, Deserialize)]
struct LayerMeta {
    threshold: i32,
    param_scale: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SnnManifest {
    arch: String,
    input_shape: Shape,
    layer_specs: Vec<LayerSpec>,
    bits: BitConfig,
    input: InputEncoding,
    layers: Vec<LayerMeta>,
    slope: f64,
}
