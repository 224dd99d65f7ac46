//! Binary encoding of a layer chain and its parameters (little-endian).
//!
//! ```text
//! u32 input rank, u32 × rank input dims
//! u32 n_layers
//! per layer: u8 kind, u32 a, u32 b, u32 c
//!            u32 weight rank, u32 × rank weight dims, f64 × Π dims
//!            u32 n_bias, f64 × n_bias
//! ```

use super::{shape_chain, LayerParams, LayerSpec, Parameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub input_shape: Vec<usize>,
    pub specs: Vec<LayerSpec>,
    pub params: Parameters,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_chain(out: &mut Vec<u8>, input_shape: &[usize], specs: &[LayerSpec], params: &Parameters) {
    put_u32(out, input_shape.len());
    input_shape.iter().for_each(|&d| put_u32(out, d));
    put_u32(out, specs.len());
    for (spec, p) in specs.iter().zip(&params.layers) {
        let (kind, a, b, c) = match *spec {
            LayerSpec::Conv {
                out_channels,
                kernel_h,
                kernel_w,
            } => (0u8, out_channels, kernel_h, kernel_w),
            LayerSpec::Relu => (1, 0, 0, 0),
            LayerSpec::MaxPool => (2, 0, 0, 0),
            LayerSpec::Flatten => (3, 0, 0, 0),
            LayerSpec::Dense { out_units } => (4, out_units, 0, 0),
            LayerSpec::Sigmoid => (5, 0, 0, 0),
        };
        out.push(kind);
        put_u32(out, a);
        put_u32(out, b);
        put_u32(out, c);
        put_u32(out, p.weight_shape.len());
        p.weight_shape.iter().for_each(|&d| put_u32(out, d));
        p.weight.iter().for_each(|w| out.extend_from_slice(&w.to_le_bytes()));
        put_u32(out, p.bias.len());
        p.bias.iter().for_each(|b| out.extend_from_slice(&b.to_le_bytes()));
    }
}

/// Cursor over a byte slice that reports truncation as a format error.
pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Config("truncated model data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Config("bad length".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub(crate) fn decode_chain_from(r: &mut Reader<'_>, seed: u64) -> Result<ChainRecord> {
    let rank = r.u32()?;
    let input_shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let n_layers = r.u32()?;
    let mut specs = Vec::with_capacity(n_layers.min(1024));
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let kind = r.u8()?;
        let (a, b, c) = (r.u32()?, r.u32()?, r.u32()?);
        specs.push(match kind {
            0 => LayerSpec::Conv {
                out_channels: a,
                kernel_h: b,
                kernel_w: c,
            },
            1 => LayerSpec::Relu,
            2 => LayerSpec::MaxPool,
            3 => LayerSpec::Flatten,
            4 => LayerSpec::Dense { out_units: a },
            5 => LayerSpec::Sigmoid,
            k => return Err(Error::Config(format!("unknown layer kind {k}"))),
        });
        let wrank = r.u32()?;
        let weight_shape = (0..wrank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n_w = if wrank == 0 { 0 } else { weight_shape.iter().product() };
        let weight = r.f64s(n_w)?;
        let n_b = r.u32()?;
        let bias = r.f64s(n_b)?;
        layers.push(LayerParams {
            weight_shape,
            weight,
            bias,
        });
    }
    let params = Parameters { layers, seed };
    // parameter shapes must agree with what the chain implies
    let shapes = shape_chain(&specs, &input_shape)?;
    for (i, (spec, p)) in specs.iter().zip(&params.layers).enumerate() {
        let expect = match *spec {
            LayerSpec::Conv {
                out_channels,
                kernel_h,
                kernel_w,
            } => vec![out_channels, shapes[i][0], kernel_h, kernel_w],
            LayerSpec::Dense { out_units } => vec![out_units, shapes[i][0]],
            _ => vec![],
        };
        let n_bias = expect.first().copied().unwrap_or(0);
        if p.weight_shape != expect || p.bias.len() != n_bias {
            return Err(Error::Shape {
                layer: i,
                message: format!("stored weight shape {:?}, chain implies {expect:?}", p.weight_shape),
            });
        }
    }
    Ok(ChainRecord {
        input_shape,
        specs,
        params,
    })
}

pub fn decode_chain(bytes: &[u8], seed: u64) -> Result<(ChainRecord, usize)> {
    let mut r = Reader::new(bytes);
    let rec = decode_chain_from(&mut r, seed)?;
    Ok((rec, r.pos))
}
