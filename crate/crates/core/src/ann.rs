//! The float convolutional baseline: forward pass, mini-batch SGD training,
//! evaluation and `.annw` serialization.
//!
//! Weights are laid out so that every layer is a row-major GEMM:
//! convolutions as `[ky][kx][in_c][out_c]` against an im2col buffer, dense
//! layers as `[in][out]`.

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{Activation, ArchError, Architecture, LayerKind, LayerSpec, Shape};
use crate::dataset::LabeledImages;
use crate::format::{self, BlobWriter, FormatError};
use crate::linalg::{gemm, Mat, Real};

#[derive(Debug, Error)]
pub enum AnnError {
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error("input has {found} values, model expects {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("no training samples")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> LayerParams<T> {
    fn zeros_like(&self) -> Self {
        Self {
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
        }
    }
}

/// A trained (or freshly initialised) float network.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnModel {
    pub arch: Architecture,
    pub params: Vec<LayerParams<f32>>,
}

/// Post-activation output of every layer for one image; the last entry is
/// the logit vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub activations: Vec<Vec<f32>>,
}

impl ForwardOutput {
    pub fn logits(&self) -> &[f32] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub momentum: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.05,
            lr_decay: 0.5,
            decay_every: 10,
            momentum: 0.9,
            dropout_rate: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AnnError> {
        if self.epochs == 0 {
            return Err(AnnError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(AnnError::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(AnnError::Config("dropout_rate must lie in [0, 1)".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AnnError::Config("learning_rate must be positive".into()));
        }
        if self.decay_every == 0 {
            return Err(AnnError::Config("decay_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    /// Accuracy on the training batches as seen during the epoch (dropout on).
    pub running_train_accuracy: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_validation_accuracy: f64,
}

// ---------------------------------------------------------------------------
// generic kernels

struct Trace<T> {
    /// `acts[0]` is the input batch, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<T>>,
    cols: Vec<Vec<T>>,
    masks: Vec<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(x: &[T], batch: usize, input: Shape, output: Shape, kernel: usize, stride: usize, padding: usize) -> Vec<T> {
    let c = input.channels;
    let k_len = kernel * kernel * c;
    let in_len = input.len();
    let mut cols = vec![T::zero(); batch * output.height * output.width * k_len];
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        for oy in 0..output.height {
            for ox in 0..output.width {
                let row = ((b * output.height + oy) * output.width + ox) * k_len;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= input.height as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= input.width as isize {
                            continue;
                        }
                        let src = input.index(iy as usize, ix as usize, 0);
                        let dst = row + (ky * kernel + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&xb[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(cols: &[T], batch: usize, input: Shape, output: Shape, kernel: usize, stride: usize, padding: usize) -> Vec<T> {
    let c = input.channels;
    let k_len = kernel * kernel * c;
    let in_len = input.len();
    let mut dx = vec![T::zero(); batch * in_len];
    for b in 0..batch {
        let db = &mut dx[b * in_len..(b + 1) * in_len];
        for oy in 0..output.height {
            for ox in 0..output.width {
                let row = ((b * output.height + oy) * output.width + ox) * k_len;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= input.height as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= input.width as isize {
                            continue;
                        }
                        let dst = input.index(iy as usize, ix as usize, 0);
                        let src = row + (ky * kernel + kx) * c;
                        for (d, &s) in db[dst..dst + c].iter_mut().zip(&cols[src..src + c]) {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
    }
    dx
}

fn avg_pool<T: Real>(x: &[T], batch: usize, input: Shape, output: Shape, window: usize, stride: usize) -> Vec<T> {
    let c = input.channels;
    let scale = T::from_f64(1.0 / (window * window) as f64);
    let mut out = vec![T::zero(); batch * output.len()];
    for b in 0..batch {
        let xb = &x[b * input.len()..(b + 1) * input.len()];
        let ob = &mut out[b * output.len()..(b + 1) * output.len()];
        for oy in 0..output.height {
            for ox in 0..output.width {
                let dst = output.index(oy, ox, 0);
                for dy in 0..window {
                    for dx in 0..window {
                        let src = input.index(oy * stride + dy, ox * stride + dx, 0);
                        for ch in 0..c {
                            ob[dst + ch] = ob[dst + ch] + xb[src + ch];
                        }
                    }
                }
                for v in &mut ob[dst..dst + c] {
                    *v = *v * scale;
                }
            }
        }
    }
    out
}

fn avg_pool_backward<T: Real>(dy: &[T], batch: usize, input: Shape, output: Shape, window: usize, stride: usize) -> Vec<T> {
    let c = input.channels;
    let scale = T::from_f64(1.0 / (window * window) as f64);
    let mut dx = vec![T::zero(); batch * input.len()];
    for b in 0..batch {
        let db = &mut dx[b * input.len()..(b + 1) * input.len()];
        let gb = &dy[b * output.len()..(b + 1) * output.len()];
        for oy in 0..output.height {
            for ox in 0..output.width {
                let src = output.index(oy, ox, 0);
                for wy in 0..window {
                    for wx in 0..window {
                        let dst = input.index(oy * stride + wy, ox * stride + wx, 0);
                        for ch in 0..c {
                            db[dst + ch] = db[dst + ch] + gb[src + ch] * scale;
                        }
                    }
                }
            }
        }
    }
    dx
}

fn broadcast_bias<T: Real>(rows: usize, bias: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * bias.len());
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    out
}

fn forward_batch<T: Real>(
    arch: &Architecture,
    shapes: &[Shape],
    params: &[LayerParams<T>],
    input: Vec<T>,
    batch: usize,
    mut dropout: Option<(&mut ChaCha8Rng, f64)>,
    keep_cols: bool,
) -> Trace<T> {
    let n_layers = arch.layers.len();
    let mut acts = Vec::with_capacity(n_layers + 1);
    let mut cols_store = Vec::with_capacity(n_layers);
    let mut masks = Vec::with_capacity(n_layers);
    acts.push(input);
    for (i, layer) in arch.layers.iter().enumerate() {
        let (inp, out) = (shapes[i], shapes[i + 1]);
        let x = &acts[i];
        let mut kept_cols = Vec::new();
        let mut y = match layer.kind {
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let cols = im2col(x, batch, inp, out, kernel, stride, padding);
                let rows = batch * out.height * out.width;
                let k_len = kernel * kernel * inp.channels;
                let mut z = broadcast_bias(rows, &params[i].bias);
                gemm(
                    Mat::new(&cols, rows, k_len),
                    Mat::new(&params[i].weight, k_len, out_channels),
                    T::one(),
                    &mut z,
                );
                if keep_cols {
                    kept_cols = cols;
                }
                z
            }
            LayerKind::AvgPool { window, stride } => avg_pool(x, batch, inp, out, window, stride),
            LayerKind::Dense { units } => {
                let d = inp.len();
                let mut z = broadcast_bias(batch, &params[i].bias);
                gemm(Mat::new(x, batch, d), Mat::new(&params[i].weight, d, units), T::one(), &mut z);
                z
            }
        };
        if layer.activation == Activation::Relu {
            for v in &mut y {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
        let mut mask = Vec::new();
        if let Some((rng, rate)) = dropout.as_mut() {
            if layer.is_pool() && *rate > 0.0 {
                let keep = T::from_f64(1.0 / (1.0 - *rate));
                mask = (0..y.len())
                    .map(|_| if rng.gen::<f64>() < *rate { T::zero() } else { keep })
                    .collect();
                for (v, &m) in y.iter_mut().zip(&mask) {
                    *v = *v * m;
                }
            }
        }
        cols_store.push(kept_cols);
        masks.push(mask);
        acts.push(y);
    }
    Trace {
        acts,
        cols: cols_store,
        masks,
    }
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
fn softmax_cross_entropy<T: Real>(logits: &[T], labels: &[u8], classes: usize) -> (f64, Vec<T>, usize) {
    let batch = labels.len();
    let mut grad = vec![T::zero(); logits.len()];
    let mut loss = 0.0;
    let mut correct = 0;
    let inv_batch = 1.0 / batch as f64;
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let (argmax, max) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| {
                let v = v.to_f64().unwrap_or(f64::NAN);
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            });
        if argmax == label as usize {
            correct += 1;
        }
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64().unwrap_or(f64::NAN) - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss += sum.ln() + max - row[label as usize].to_f64().unwrap_or(f64::NAN);
        for (j, e) in exps.iter().enumerate() {
            let target = if j == label as usize { 1.0 } else { 0.0 };
            grad[b * classes + j] = T::from_f64((e / sum - target) * inv_batch);
        }
    }
    (loss * inv_batch, grad, correct)
}

fn backward<T: Real>(
    arch: &Architecture,
    shapes: &[Shape],
    params: &[LayerParams<T>],
    trace: &Trace<T>,
    dlogits: Vec<T>,
    batch: usize,
) -> Vec<LayerParams<T>> {
    let mut grads: Vec<LayerParams<T>> = params.iter().map(LayerParams::zeros_like).collect();
    let mut d = dlogits;
    for i in (0..arch.layers.len()).rev() {
        let layer = &arch.layers[i];
        let (inp, out) = (shapes[i], shapes[i + 1]);
        if !trace.masks[i].is_empty() {
            for (g, &m) in d.iter_mut().zip(&trace.masks[i]) {
                *g = *g * m;
            }
        }
        if layer.activation == Activation::Relu {
            for (g, &a) in d.iter_mut().zip(&trace.acts[i + 1]) {
                if a <= T::zero() {
                    *g = T::zero();
                }
            }
        }
        let need_input_grad = i > 0;
        d = match layer.kind {
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let rows = batch * out.height * out.width;
                let k_len = kernel * kernel * inp.channels;
                let cols = &trace.cols[i];
                gemm(
                    Mat::t(cols, rows, k_len),
                    Mat::new(&d, rows, out_channels),
                    T::zero(),
                    &mut grads[i].weight,
                );
                column_sums(&d, out_channels, &mut grads[i].bias);
                if need_input_grad {
                    let mut dcols = vec![T::zero(); rows * k_len];
                    gemm(
                        Mat::new(&d, rows, out_channels),
                        Mat::t(&params[i].weight, k_len, out_channels),
                        T::zero(),
                        &mut dcols,
                    );
                    col2im(&dcols, batch, inp, out, kernel, stride, padding)
                } else {
                    Vec::new()
                }
            }
            LayerKind::AvgPool { window, stride } => {
                if need_input_grad {
                    avg_pool_backward(&d, batch, inp, out, window, stride)
                } else {
                    Vec::new()
                }
            }
            LayerKind::Dense { units } => {
                let dim = inp.len();
                gemm(
                    Mat::t(&trace.acts[i], batch, dim),
                    Mat::new(&d, batch, units),
                    T::zero(),
                    &mut grads[i].weight,
                );
                column_sums(&d, units, &mut grads[i].bias);
                if need_input_grad {
                    let mut dx = vec![T::zero(); batch * dim];
                    gemm(Mat::new(&d, batch, units), Mat::t(&params[i].weight, dim, units), T::zero(), &mut dx);
                    dx
                } else {
                    Vec::new()
                }
            }
        };
    }
    grads
}

fn column_sums<T: Real>(m: &[T], cols: usize, out: &mut [T]) {
    for row in m.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
}

fn he_uniform(arch: &Architecture, seed: u64) -> Vec<LayerParams<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = arch.shapes();
    arch.layers
        .iter()
        .zip(&shapes)
        .map(|(layer, &inp)| {
            if layer.is_pool() {
                return LayerParams {
                    weight: Vec::new(),
                    bias: Vec::new(),
                };
            }
            let limit = (6.0 / layer.fan_in(inp) as f64).sqrt();
            LayerParams {
                weight: (0..layer.weight_len(inp))
                    .map(|_| rng.gen_range(-limit..limit) as f32)
                    .collect(),
                bias: vec![0.0; layer.bias_len(inp)],
            }
        })
        .collect()
}

const EVAL_BATCH: usize = 128;

impl AnnModel {
    /// Untrained model for a hyphenated channel string, He-uniform initialised.
    pub fn build(channel_string: &str, input: Shape, seed: u64) -> Result<Self, AnnError> {
        let arch = Architecture::parse(channel_string, input)?;
        Ok(Self::initialised(arch, seed))
    }

    pub fn initialised(arch: Architecture, seed: u64) -> Self {
        let params = he_uniform(&arch, seed);
        Self { arch, params }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let shapes = arch.shapes();
        let params = arch
            .layers
            .iter()
            .zip(&shapes)
            .map(|(l, &s)| {
                if l.is_pool() {
                    LayerParams {
                        weight: Vec::new(),
                        bias: Vec::new(),
                    }
                } else {
                    LayerParams {
                        weight: vec![0.0; l.weight_len(s)],
                        bias: vec![0.0; l.bias_len(s)],
                    }
                }
            })
            .collect();
        Self { arch, params }
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.weight.iter().chain(&p.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, len: usize) -> Result<(), AnnError> {
        let expected = self.arch.input.len();
        if len != expected {
            return Err(AnnError::ShapeMismatch { expected, found: len });
        }
        Ok(())
    }

    /// Inference-mode forward pass of one image.
    pub fn forward(&self, image: &[f32]) -> Result<ForwardOutput, AnnError> {
        self.check_input(image.len())?;
        let shapes = self.arch.shapes();
        let mut trace = forward_batch(&self.arch, &shapes, &self.params, image.to_vec(), 1, None, false);
        trace.acts.remove(0);
        Ok(ForwardOutput {
            activations: trace.acts,
        })
    }

    /// Output of `layer` (0-based layer index) for every image, row-major
    /// `N × layer_width`. `layer = arch.layers.len() - 1` yields logits.
    pub fn layer_outputs(&self, data: &LabeledImages, layer: usize) -> Result<Vec<f32>, AnnError> {
        self.check_input(data.shape.len())?;
        let shapes = self.arch.shapes();
        let d = data.shape.len();
        let width = shapes[layer + 1].len();
        let mut out = Vec::with_capacity(data.len() * width);
        for start in (0..data.len()).step_by(EVAL_BATCH) {
            let end = (start + EVAL_BATCH).min(data.len());
            let input = data.pixels[start * d..end * d].to_vec();
            let trace = forward_batch(&self.arch, &shapes, &self.params, input, end - start, None, false);
            out.extend_from_slice(&trace.acts[layer + 1]);
        }
        Ok(out)
    }

    pub fn predict(&self, data: &LabeledImages) -> Result<Vec<usize>, AnnError> {
        let classes = self.arch.num_classes();
        let logits = self.layer_outputs(data, self.arch.layers.len() - 1)?;
        Ok(logits.chunks_exact(classes).map(argmax).collect())
    }

    /// Fraction of samples whose argmax logit equals the label.
    pub fn evaluate(&self, data: &LabeledImages) -> Result<f64, AnnError> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let preds = self.predict(data)?;
        Ok(accuracy(&preds, &data.labels))
    }

    /// Mini-batch SGD with momentum; returns the epoch with the best
    /// validation accuracy together with the learning curve.
    pub fn train(
        &self,
        train: &LabeledImages,
        val: &LabeledImages,
        cfg: &TrainConfig,
        mut on_epoch: impl FnMut(&EpochStats),
    ) -> Result<(AnnModel, TrainReport), AnnError> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(AnnError::EmptyDataset);
        }
        self.check_input(train.shape.len())?;
        let shapes = self.arch.shapes();
        let classes = self.arch.num_classes();
        let d = train.shape.len();
        let mut params = self.params.clone();
        let mut velocity: Vec<LayerParams<f32>> = params.iter().map(LayerParams::zeros_like).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a17);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut best = (params.clone(), 0usize, f64::NEG_INFINITY);
        let mut curve = Vec::with_capacity(cfg.epochs);
        let momentum = cfg.momentum as f32;

        for epoch in 0..cfg.epochs {
            let lr = cfg.learning_rate_at(epoch) as f32;
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            let mut correct = 0usize;
            for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let mut input = Vec::with_capacity(chunk.len() * d);
                let mut labels = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    input.extend_from_slice(train.image(i));
                    labels.push(train.labels[i]);
                }
                let trace = forward_batch(
                    &self.arch,
                    &shapes,
                    &params,
                    input,
                    chunk.len(),
                    Some((&mut rng, cfg.dropout_rate)),
                    true,
                );
                let (loss, dlogits, hits) =
                    softmax_cross_entropy(trace.acts.last().expect("logits"), &labels, classes);
                if !loss.is_finite() {
                    return Err(AnnError::Divergence {
                        epoch,
                        batch: batch_idx,
                        loss,
                    });
                }
                loss_sum += loss * chunk.len() as f64;
                correct += hits;
                let grads = backward(&self.arch, &shapes, &params, &trace, dlogits, chunk.len());
                for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grads) {
                    for ((w, m), &gw) in p.weight.iter_mut().zip(&mut v.weight).zip(&g.weight) {
                        *m = momentum * *m + gw;
                        *w -= lr * *m;
                    }
                    for ((b, m), &gb) in p.bias.iter_mut().zip(&mut v.bias).zip(&g.bias) {
                        *m = momentum * *m + gb;
                        *b -= lr * *m;
                    }
                }
            }
            let candidate = AnnModel {
                arch: self.arch.clone(),
                params: params.clone(),
            };
            if !candidate.is_finite() {
                return Err(AnnError::Divergence {
                    epoch,
                    batch: order.len() / cfg.batch_size,
                    loss: f64::NAN,
                });
            }
            let val_acc = if val.is_empty() { 0.0 } else { candidate.evaluate(val)? };
            let stats = EpochStats {
                epoch,
                learning_rate: lr as f64,
                mean_loss: loss_sum / train.len() as f64,
                running_train_accuracy: correct as f64 / train.len() as f64,
                validation_accuracy: val_acc,
            };
            on_epoch(&stats);
            curve.push(stats);
            if val_acc > best.2 {
                best = (params.clone(), epoch, val_acc);
            }
        }
        let (best_params, best_epoch, best_val) = best;
        Ok((
            AnnModel {
                arch: self.arch.clone(),
                params: best_params,
            },
            TrainReport {
                curve,
                best_epoch,
                best_validation_accuracy: best_val,
            },
        ))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, AnnError> {
        let shapes = self.arch.shapes();
        let mut w = BlobWriter::new();
        for (i, (layer, p)) in self.arch.layers.iter().zip(&self.params).enumerate() {
            if layer.is_pool() {
                continue;
            }
            w.push_f32(&format!("layer{i}.weight"), &weight_shape(layer, shapes[i]), &p.weight);
            w.push_f32(&format!("layer{i}.bias"), &[p.bias.len()], &p.bias);
        }
        Ok(w.finish(ANNW_KIND, &AnnManifest::from(&self.arch))?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AnnError> {
        let (meta, reader): (AnnManifest, _) = format::decode(ANNW_KIND, bytes)?;
        let arch = Architecture {
            name: meta.arch,
            input: meta.input,
            layers: meta.layers,
        };
        arch.validate()?;
        let shapes = arch.shapes();
        let mut params = Vec::with_capacity(arch.layers.len());
        for (i, layer) in arch.layers.iter().enumerate() {
            if layer.is_pool() {
                params.push(LayerParams {
                    weight: Vec::new(),
                    bias: Vec::new(),
                });
                continue;
            }
            let weight = reader.f32(&format!("layer{i}.weight"))?;
            let bias = reader.f32(&format!("layer{i}.bias"))?;
            if weight.len() != layer.weight_len(shapes[i]) || bias.len() != layer.bias_len(shapes[i]) {
                return Err(FormatError::Inconsistent(format!("layer {i} parameter sizes do not match the architecture")).into());
            }
            params.push(LayerParams { weight, bias });
        }
        Ok(Self { arch, params })
    }
}

pub const ANNW_KIND: &str = "annw";

#[derive(Debug, Serialize, Deserialize)]
struct AnnManifest {
    arch: String,
    input: Shape,
    layers: Vec<LayerSpec>,
}

impl From<&Architecture> for AnnManifest {
    fn from(a: &Architecture) -> Self {
        Self {
            arch: a.name.clone(),
            input: a.input,
            layers: a.layers.clone(),
        }
    }
}

pub(crate) fn weight_shape(layer: &LayerSpec, input: Shape) -> Vec<usize> {
    match layer.kind {
        LayerKind::Conv {
            out_channels, kernel, ..
        } => vec![kernel, kernel, input.channels, out_channels],
        LayerKind::AvgPool { window, .. } => vec![window, window],
        LayerKind::Dense { units } => vec![input.len(), units],
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(predictions: &[usize], labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| **p == **l as usize)
        .count();
    hits as f64 / labels.len() as f64
}
