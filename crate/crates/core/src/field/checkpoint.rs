//! Versioned binary parameter checkpoints.
//!
//! Layout (little-endian): the magic `NSDFCKPT`, a u32 format version,
//! the network configuration (u32 hidden_layers, hidden_width,
//! skip_layer, num_frequencies, steps_per_octave; f64 base_scale,
//! softplus_beta), a u32 layer count, `(out, in)` u32 pairs per layer, then
//! each layer's row-major weights followed by its bias as f32.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Dense, Encoding, NetworkConfig, NetworkParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NSDFCKPT";
const FORMAT_VERSION: u32 = 1;

pub fn write_checkpoint(params: &NetworkParams<f32>) -> Result<Vec<u8>> {
    params.validate()?;
    let c = &params.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [
        c.hidden_layers,
        c.hidden_width,
        c.skip_layer,
        c.encoding.num_frequencies,
        c.encoding.steps_per_octave,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.encoding.base_scale.to_le_bytes());
    out.extend_from_slice(&c.softplus_beta.to_le_bytes());
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for l in &params.layers {
        let (o, i) = l.weight.dim();
        out.extend_from_slice(&(o as u32).to_le_bytes());
        out.extend_from_slice(&(i as u32).to_le_bytes());
    }
    for t in params.tensors() {
        for x in t {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<NetworkParams<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let hidden_layers = r.u32()?;
    let hidden_width = r.u32()?;
    let skip_layer = r.u32()?;
    let num_frequencies = r.u32()?;
    let steps_per_octave = r.u32()?;
    let base_scale = r.f64()?;
    let softplus_beta = r.f64()?;
    let config = NetworkConfig {
        encoding: Encoding {
            num_frequencies,
            base_scale,
            steps_per_octave,
        },
        hidden_layers,
        hidden_width,
        skip_layer,
        softplus_beta,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("bad configuration: {e}")))?;
    let count = r.u32()?;
    let expected = config.layer_shapes();
    if count != expected.len() {
        return Err(Error::Checkpoint(format!("expected {} layers, header says {count}", expected.len())));
    }
    let mut shapes = Vec::with_capacity(count);
    for want in &expected {
        let shape = (r.u32()?, r.u32()?);
        if shape != *want {
            return Err(Error::Checkpoint(format!("layer shape {shape:?} does not match {want:?}")));
        }
        shapes.push(shape);
    }
    let mut layers = Vec::with_capacity(count);
    for (o, i) in shapes {
        let weight = Array2::from_shape_vec((o, i), r.f32s(o * i)?).expect("sized");
        let bias = Array1::from_vec(r.f32s(o)?);
        layers.push(Dense { weight, bias });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(NetworkParams { config, layers })
}

pub fn save_checkpoint(params: &NetworkParams<f32>, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
