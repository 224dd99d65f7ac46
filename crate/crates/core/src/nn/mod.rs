//! A small convolutional network engine with explicit forward and backward
//! passes, in `f64` throughout.
//!
//! Layers are described by a chain of [`LayerSpec`]s; parameters live in a
//! separate [`Parameters`] value so that several forward passes (e.g. the two
//! arms of a Siamese network) can share one parameter set.

mod codec;
mod gradcheck;
mod optim;
mod params;
mod pass;

pub use codec::{decode_chain, encode_chain, ChainRecord};
pub use gradcheck::{check_gradients, relative_error, GradCheck};
pub use optim::{bce_loss, sgd_step, Adam, BCE_CLAMP};
pub use params::{init_parameters, LayerParams, Parameters, INIT_STD};
pub use pass::{backward, forward, forward_from, forward_pattern, Cache, Gradients};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array with shape `(channels, height, width)` or `(length,)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                layer: 0,
                message: format!("shape {shape:?} needs {n} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Valid cross-correlation with stride 1 and no padding.
    Conv {
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
    },
    Relu,
    /// 2×2 window, stride 2; an odd trailing row/column is dropped.
    MaxPool,
    Flatten,
    Dense {
        out_units: usize,
    },
    Sigmoid,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }

    /// Shape produced from `input`; `layer` is used for error reporting only.
    pub fn output_shape(&self, input: &[usize], layer: usize) -> Result<Vec<usize>> {
        let err = |message: String| Error::Shape { layer, message };
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel_h,
                kernel_w,
            } => match *input {
                [_, h, w] if h >= kernel_h && w >= kernel_w && kernel_h > 0 && kernel_w > 0 => {
                    Ok(vec![out_channels, h - kernel_h + 1, w - kernel_w + 1])
                }
                [_, h, w] => Err(err(format!(
                    "conv {kernel_h}×{kernel_w} does not fit a {h}×{w} input"
                ))),
                _ => Err(err(format!("conv expects (C, H, W), got {input:?}"))),
            },
            LayerSpec::MaxPool => match *input {
                [c, h, w] if h >= 2 && w >= 2 => Ok(vec![c, h / 2, w / 2]),
                _ => Err(err(format!("max-pool needs spatial dims >= 2, got {input:?}"))),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { out_units } => match *input {
                [_] if out_units > 0 => Ok(vec![out_units]),
                _ => Err(err(format!("dense expects a flat input, got {input:?}"))),
            },
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
        }
    }
}

/// Shapes of every layer output for `input_shape`, with the input prepended.
pub fn shape_chain(specs: &[LayerSpec], input_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
    if input_shape.is_empty() || input_shape.iter().any(|&d| d == 0) {
        return Err(Error::Shape {
            layer: 0,
            message: format!("invalid input shape {input_shape:?}"),
        });
    }
    let mut shapes = vec![input_shape.to_vec()];
    for (i, spec) in specs.iter().enumerate() {
        let next = spec.output_shape(shapes.last().unwrap(), i)?;
        shapes.push(next);
    }
    Ok(shapes)
}
