use super::{LayerSpec, Parameters, Tensor};
use crate::error::{Error, Result};

/// Per-layer state recorded by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    /// Input of every layer, plus the final output as the last element.
    pub activations: Vec<Tensor>,
    /// Flat input index of each max-pool output, one vector per layer.
    argmax: Vec<Vec<usize>>,
}

impl Cache {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("cache holds the input")
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Parameters,
    pub input: Tensor,
}

pub fn forward(specs: &[LayerSpec], params: &Parameters, input: &Tensor) -> Result<(Tensor, Cache)> {
    if params.layers.len() != specs.len() {
        return Err(Error::Shape {
            layer: 0,
            message: format!(
                "{} layer specs but {} parameter blocks",
                specs.len(),
                params.layers.len()
            ),
        });
    }
    if !input.is_finite() {
        return Err(Error::NonFinite("network input".into()));
    }
    let mut activations = Vec::with_capacity(specs.len() + 1);
    let mut argmax = vec![Vec::new(); specs.len()];
    activations.push(input.clone());
    for i in 0..specs.len() {
        let (y, idx) = step(specs, params, i, activations.last().unwrap())?;
        argmax[i] = idx;
        activations.push(y);
    }
    let out = activations.last().unwrap().clone();
    Ok((out, Cache { activations, argmax }))
}

/// Output of layers `start..` applied to `input`, the activation entering
/// layer `start`. No cache is kept.
pub fn forward_from(specs: &[LayerSpec], params: &Parameters, start: usize, input: &Tensor) -> Result<Tensor> {
    Ok(forward_pattern(specs, params, start, input)?.0)
}

/// [`forward_from`] plus a hash of every ReLU sign and max-pool choice made
/// on the way, comparable with [`Cache::pattern_from`].
pub fn forward_pattern(specs: &[LayerSpec], params: &Parameters, start: usize, input: &Tensor) -> Result<(Tensor, u64)> {
    let mut x = input.clone();
    let mut h = PatternHash::default();
    for i in start..specs.len() {
        let (y, idx) = step(specs, params, i, &x)?;
        h.layer(&specs[i], &x, &idx);
        x = y;
    }
    Ok((x, h.0))
}

impl Cache {
    /// Pattern hash of layers `start..` as recorded by [`forward`].
    pub fn pattern_from(&self, specs: &[LayerSpec], start: usize) -> u64 {
        let mut h = PatternHash::default();
        for i in start..specs.len() {
            h.layer(&specs[i], &self.activations[i], &self.argmax[i]);
        }
        h.0
    }
}

struct PatternHash(u64);

impl Default for PatternHash {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl PatternHash {
    fn feed(&mut self, v: u64) {
        self.0 = (self.0 ^ v).wrapping_mul(0x100_0000_01b3);
    }

    fn layer(&mut self, spec: &LayerSpec, input: &Tensor, argmax: &[usize]) {
        match spec {
            LayerSpec::Relu => input.data.iter().for_each(|&v| self.feed(u64::from(v > 0.0))),
            LayerSpec::MaxPool => argmax.iter().for_each(|&i| self.feed(i as u64)),
            _ => {}
        }
    }
}

fn step(specs: &[LayerSpec], params: &Parameters, i: usize, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let out_shape = specs[i].output_shape(&x.shape, i)?;
    let p = &params.layers[i];
    let mut argmax = Vec::new();
    let y = match specs[i] {
        LayerSpec::Conv { .. } => conv_forward(x, &p.weight, &p.bias, &p.weight_shape, out_shape),
        LayerSpec::Relu => Tensor {
            shape: out_shape,
            data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        },
        LayerSpec::MaxPool => {
            let (y, idx) = pool_forward(x, out_shape);
            argmax = idx;
            y
        }
        LayerSpec::Flatten => Tensor {
            shape: out_shape,
            data: x.data.clone(),
        },
        LayerSpec::Dense { .. } => dense_forward(x, &p.weight, &p.bias, out_shape),
        LayerSpec::Sigmoid => Tensor {
            shape: out_shape,
            data: x.data.iter().map(|&v| sigmoid(v)).collect(),
        },
    };
    if !y.is_finite() {
        return Err(Error::NonFinite(format!("activation of layer {i}")));
    }
    Ok((y, argmax))
}

pub fn backward(
    specs: &[LayerSpec],
    params: &Parameters,
    cache: &Cache,
    output_grad: &Tensor,
) -> Result<Gradients> {
    if output_grad.shape != cache.output().shape {
        return Err(Error::Shape {
            layer: specs.len(),
            message: format!(
                "output gradient {:?} does not match output {:?}",
                output_grad.shape,
                cache.output().shape
            ),
        });
    }
    let mut grads = Parameters::zeros_like(params);
    let mut g = output_grad.clone();
    for i in (0..specs.len()).rev() {
        let x = &cache.activations[i];
        let y = &cache.activations[i + 1];
        let p = &params.layers[i];
        g = match specs[i] {
            LayerSpec::Conv { .. } => {
                let gp = &mut grads.layers[i];
                conv_backward(x, &p.weight, &p.weight_shape, &g, &mut gp.weight, &mut gp.bias)
            }
            LayerSpec::Relu => Tensor {
                shape: x.shape.clone(),
                data: x
                    .data
                    .iter()
                    .zip(&g.data)
                    .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect(),
            },
            LayerSpec::MaxPool => {
                let mut dx = Tensor::zeros(x.shape.clone());
                for (&src, &gv) in cache.argmax[i].iter().zip(&g.data) {
                    dx.data[src] += gv;
                }
                dx
            }
            LayerSpec::Flatten => Tensor {
                shape: x.shape.clone(),
                data: g.data,
            },
            LayerSpec::Dense { .. } => {
                let gp = &mut grads.layers[i];
                dense_backward(x, &p.weight, &g, &mut gp.weight, &mut gp.bias)
            }
            LayerSpec::Sigmoid => Tensor {
                shape: x.shape.clone(),
                data: y
                    .data
                    .iter()
                    .zip(&g.data)
                    .map(|(&s, &gv)| gv * s * (1.0 - s))
                    .collect(),
            },
        };
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient at layer {i}")));
        }
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("parameter gradient".into()));
    }
    Ok(Gradients {
        params: grads,
        input: g,
    })
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn conv_forward(x: &Tensor, w: &[f64], b: &[f64], wshape: &[usize], out_shape: Vec<usize>) -> Tensor {
    let (oc, ic, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
    let (h, wd) = (x.shape[1], x.shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut out = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..ic {
            let xin = &x.data[i * h * wd..(i + 1) * h * wd];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = w[((o * ic + i) * kh + ky) * kw + kx];
                    for y in 0..oh {
                        let src = &xin[(y + ky) * wd + kx..(y + ky) * wd + kx + ow];
                        let dst = &mut plane[y * ow..(y + 1) * ow];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Tensor {
        shape: out_shape,
        data: out,
    }
}

fn conv_backward(
    x: &Tensor,
    w: &[f64],
    wshape: &[usize],
    g: &Tensor,
    dw: &mut [f64],
    db: &mut [f64],
) -> Tensor {
    let (oc, ic, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
    let (h, wd) = (x.shape[1], x.shape[2]);
    let (oh, ow) = (g.shape[1], g.shape[2]);
    let mut dx = vec![0.0; x.data.len()];
    for o in 0..oc {
        let gp = &g.data[o * oh * ow..(o + 1) * oh * ow];
        db[o] += gp.iter().sum::<f64>();
        for i in 0..ic {
            let xin = &x.data[i * h * wd..(i + 1) * h * wd];
            let dxin = &mut dx[i * h * wd..(i + 1) * h * wd];
            for ky in 0..kh {
                for kx in 0..kw {
                    let widx = ((o * ic + i) * kh + ky) * kw + kx;
                    let wv = w[widx];
                    let mut acc = 0.0;
                    for y in 0..oh {
                        let grow = &gp[y * ow..(y + 1) * ow];
                        let off = (y + ky) * wd + kx;
                        let xrow = &xin[off..off + ow];
                        acc += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                        let drow = &mut dxin[off..off + ow];
                        for (d, gv) in drow.iter_mut().zip(grow) {
                            *d += wv * gv;
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    Tensor {
        shape: x.shape.clone(),
        data: dx,
    }
}

fn pool_forward(x: &Tensor, out_shape: Vec<usize>) -> (Tensor, Vec<usize>) {
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                // row-major window order; strict > keeps the first maximum
                let mut best = base + 2 * y * w + 2 * xo;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = base + (2 * y + dy) * w + 2 * xo + dx;
                    if x.data[cand] > x.data[best] {
                        best = cand;
                    }
                }
                out.push(x.data[best]);
                idx.push(best);
            }
        }
    }
    (
        Tensor {
            shape: out_shape,
            data: out,
        },
        idx,
    )
}

fn dense_forward(x: &Tensor, w: &[f64], b: &[f64], out_shape: Vec<usize>) -> Tensor {
    let n_in = x.data.len();
    let data = b
        .iter()
        .enumerate()
        .map(|(o, &bias)| {
            let row = &w[o * n_in..(o + 1) * n_in];
            bias + row.iter().zip(&x.data).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Tensor {
        shape: out_shape,
        data,
    }
}

fn dense_backward(x: &Tensor, w: &[f64], g: &Tensor, dw: &mut [f64], db: &mut [f64]) -> Tensor {
    let n_in = x.data.len();
    let mut dx = vec![0.0; n_in];
    for (o, &gv) in g.data.iter().enumerate() {
        db[o] += gv;
        if gv == 0.0 {
            continue;
        }
        let row = &w[o * n_in..(o + 1) * n_in];
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for j in 0..n_in {
            drow[j] += gv * x.data[j];
            dx[j] += row[j] * gv;
        }
    }
    Tensor {
        shape: x.shape.clone(),
        data: dx,
    }
}
