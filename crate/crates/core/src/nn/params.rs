use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{shape_chain, LayerSpec};
use crate::error::{Error, Result};

/// Standard deviation of the zero-mean normal used for every weight and bias.
pub const INIT_STD: f64 = 0.01;

/// Weight and bias of one layer. Parameter-free layers hold empty vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// conv: `(out, in, kh, kw)`; dense: `(out, in)`; otherwise empty.
    pub weight_shape: Vec<usize>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn empty() -> Self {
        Self {
            weight_shape: Vec::new(),
            weight: Vec::new(),
            bias: Vec::new(),
        }
    }

    fn zeros(weight_shape: Vec<usize>, n_bias: usize) -> Self {
        let n = if weight_shape.is_empty() {
            0
        } else {
            weight_shape.iter().product()
        };
        Self {
            weight_shape,
            weight: vec![0.0; n],
            bias: vec![0.0; n_bias],
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layers: Vec<LayerParams>,
    pub seed: u64,
}

impl Parameters {
    pub fn zeros_like(other: &Parameters) -> Self {
        Self {
            layers: other
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.weight_shape.clone(), l.bias.len()))
                .collect(),
            seed: other.seed,
        }
    }

    pub fn count(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }

    /// Every scalar, weights before biases, layer by layer.
    pub fn iter(&self) -> impl Iterator<Item = &f64> + '_ {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn same_layout(&self, other: &Parameters) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight_shape == b.weight_shape
                    && a.weight.len() == b.weight.len()
                    && a.bias.len() == b.bias.len()
            })
    }

    pub fn add_assign(&mut self, other: &Parameters) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// Draw every weight and bias i.i.d. from `Normal(0, 0.01²)` with a seeded
/// ChaCha8 stream, layer by layer, weights before biases.
pub fn init_parameters(specs: &[LayerSpec], input_shape: &[usize], seed: u64) -> Result<Parameters> {
    let shapes = shape_chain(specs, input_shape)?;
    let normal = Normal::new(0.0, INIT_STD).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let input = &shapes[i];
        let mut p = match *spec {
            LayerSpec::Conv {
                out_channels,
                kernel_h,
                kernel_w,
            } => LayerParams::zeros(vec![out_channels, input[0], kernel_h, kernel_w], out_channels),
            LayerSpec::Dense { out_units } => LayerParams::zeros(vec![out_units, input[0]], out_units),
            _ => LayerParams::empty(),
        };
        p.weight.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
        p.bias.iter_mut().for_each(|b| *b = normal.sample(&mut rng));
        layers.push(p);
    }
    Ok(Parameters { layers, seed })
}
