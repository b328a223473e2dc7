//! Layer graph shared by the float network and its integer spiking twin.
//!
//! Tensors are stored channel-last (`H×W×C`, row-major), so flattening a
//! feature map before a dense layer is the identity on the buffer.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArchError {
    #[error("malformed architecture string {input:?}: {reason}")]
    MalformedArchString { input: String, reason: String },
    #[error("layer {layer} produces an empty feature map from input {input}")]
    EmptyFeatureMap { layer: usize, input: Shape },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub const fn flat(len: usize) -> Self {
        Self::new(1, 1, len)
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    AvgPool {
        window: usize,
        stride: usize,
    },
    Dense {
        units: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv3x3(out_channels: usize) -> Self {
        Self {
            kind: LayerKind::Conv {
                out_channels,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            activation: Activation::Relu,
        }
    }

    pub fn avg_pool(window: usize) -> Self {
        Self {
            kind: LayerKind::AvgPool {
                window,
                stride: window,
            },
            activation: Activation::None,
        }
    }

    pub fn dense(units: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense { units },
            activation,
        }
    }

    pub fn output_shape(&self, input: Shape) -> Shape {
        match self.kind {
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => Shape::new(
                conv_extent(input.height, kernel, stride, padding),
                conv_extent(input.width, kernel, stride, padding),
                out_channels,
            ),
            LayerKind::AvgPool { window, stride } => Shape::new(
                conv_extent(input.height, window, stride, 0),
                conv_extent(input.width, window, stride, 0),
                input.channels,
            ),
            LayerKind::Dense { units } => Shape::flat(units),
        }
    }

    /// Number of float weights (excluding bias) for the given input shape.
    pub fn weight_len(&self, input: Shape) -> usize {
        match self.kind {
            LayerKind::Conv {
                out_channels,
                kernel,
                ..
            } => kernel * kernel * input.channels * out_channels,
            LayerKind::AvgPool { window, .. } => window * window,
            LayerKind::Dense { units } => input.len() * units,
        }
    }

    pub fn bias_len(&self, input: Shape) -> usize {
        match self.kind {
            LayerKind::Conv { out_channels, .. } => out_channels,
            LayerKind::AvgPool { .. } => 0,
            LayerKind::Dense { .. } => self.output_shape(input).len(),
        }
    }

    /// Input synapses per output neuron, counting padded positions.
    pub fn fan_in(&self, input: Shape) -> usize {
        match self.kind {
            LayerKind::Conv { kernel, .. } => kernel * kernel * input.channels,
            LayerKind::AvgPool { window, .. } => window * window,
            LayerKind::Dense { .. } => input.len(),
        }
    }

    pub fn is_pool(&self) -> bool {
        matches!(self.kind, LayerKind::AvgPool { .. })
    }
}

fn conv_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    let padded = input + 2 * padding;
    if padded < kernel {
        0
    } else {
        (padded - kernel) / stride + 1
    }
}

/// Ordered layer list plus input shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub name: String,
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

pub const FASHION_INPUT: Shape = Shape::new(28, 28, 1);

impl Architecture {
    /// Parses a hyphen-separated channel string such as `"32-64-10"`.
    ///
    /// Every entry but the last becomes a 3×3 same-padded ReLU convolution
    /// followed by a 2×2 average pool; the last entry is the linear output
    /// layer over the flattened feature map.
    pub fn parse(channel_string: &str, input: Shape) -> Result<Self, ArchError> {
        let malformed = |reason: &str| ArchError::MalformedArchString {
            input: channel_string.to_string(),
            reason: reason.to_string(),
        };
        let trimmed = channel_string.trim();
        if trimmed.is_empty() {
            return Err(malformed("empty string"));
        }
        let mut widths = Vec::new();
        for part in trimmed.split('-') {
            let n: usize = part
                .trim()
                .parse()
                .map_err(|_| malformed(&format!("entry {part:?} is not a positive integer")))?;
            if n == 0 {
                return Err(malformed("entries must be positive"));
            }
            widths.push(n);
        }
        let (classes, convs) = widths.split_last().expect("non-empty");
        let mut layers = Vec::with_capacity(convs.len() * 2 + 1);
        for &channels in convs {
            layers.push(LayerSpec::conv3x3(channels));
            layers.push(LayerSpec::avg_pool(2));
        }
        layers.push(LayerSpec::dense(*classes, Activation::None));
        let arch = Self {
            name: widths
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join("-"),
            input,
            layers,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let mut shape = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.output_shape(shape);
            if out.is_empty() {
                return Err(ArchError::EmptyFeatureMap {
                    layer: i,
                    input: shape,
                });
            }
            shape = out;
        }
        Ok(())
    }

    /// `shapes()[i]` is the input of layer `i`; the last entry is the output.
    pub fn shapes(&self) -> Vec<Shape> {
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut shape = self.input;
        shapes.push(shape);
        for layer in &self.layers {
            shape = layer.output_shape(shape);
            shapes.push(shape);
        }
        shapes
    }

    pub fn output_shape(&self) -> Shape {
        *self.shapes().last().expect("input shape always present")
    }

    pub fn num_classes(&self) -> usize {
        self.output_shape().len()
    }

    /// Trainable scalar count (weights + biases); pooling layers have none.
    pub fn parameter_count(&self) -> usize {
        let shapes = self.shapes();
        self.layers
            .iter()
            .zip(&shapes)
            .filter(|(l, _)| !l.is_pool())
            .map(|(l, &s)| l.weight_len(s) + l.bias_len(s))
            .sum()
    }

    /// Multiply-accumulates of one dense float forward pass.
    pub fn dense_macs(&self) -> u64 {
        let shapes = self.shapes();
        self.layers
            .iter()
            .zip(shapes.windows(2))
            .map(|(l, io)| (io[1].len() * l.fan_in(io[0])) as u64)
            .sum()
    }
}
