//! Versioned little-endian checkpoint format:
//!
//! ```text
//! "CRYN" | version: u16 | layer count: u16 | parameterized layer count: u16
//! per parameterized layer:
//!     layer index: u16
//!     weight: rank u32, dims u32 * rank, f32 * numel
//!     bias:   rank u32, dims u32 * rank, f32 * numel
//! ```
//!
//! Only parameter values are stored; optimizer moments are not.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{crayon_layers, CrayonModel, LayerParams};
use crate::error::{Error, Result};
use crate::nn::{ParamTensor, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CRYN";
pub const CHECKPOINT_VERSION: u16 = 1;

fn put_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    buf.extend((t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend((d as u32).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend(v.to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &CrayonModel) -> Vec<u8> {
    let mut buf = Vec::with_capacity(model.param_count() * 4 + 1024);
    buf.extend(CHECKPOINT_MAGIC);
    buf.extend(CHECKPOINT_VERSION.to_le_bytes());
    buf.extend((model.layers.len() as u16).to_le_bytes());
    buf.extend((model.params.len() as u16).to_le_bytes());
    for (&i, p) in &model.params {
        buf.extend((i as u16).to_le_bytes());
        put_tensor(&mut buf, &p.weight.value);
        put_tensor(&mut buf, &p.bias.value);
    }
    buf
}

/// Writes through a temporary file so a failed write never leaves a
/// truncated checkpoint under `path`.
pub fn save_checkpoint(model: &CrayonModel, path: &Path) -> Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, encode_checkpoint(model))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn tensor(&mut self, what: &str, expected: &[usize]) -> Result<Tensor> {
        let rank = self.u32(what)? as usize;
        if rank != expected.len() {
            return Err(Error::Checkpoint(format!("{what}: rank {rank}, expected {}", expected.len())));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32(what)? as usize);
        }
        if shape != expected {
            return Err(Error::Checkpoint(format!("{what}: shape {shape:?}, expected {expected:?}")));
        }
        let numel: usize = shape.iter().product();
        let bytes = self.take(numel * 4, what)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Tensor::new(&shape, data)
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<CrayonModel> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:02x?}")));
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let layers = crayon_layers();
    let layer_count = r.u16("layer count")? as usize;
    if layer_count != layers.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint describes {layer_count} layers, network has {}",
            layers.len()
        )));
    }
    let expected: Vec<_> = layers
        .iter()
        .filter_map(|l| l.op.conv_spec().map(|s| (l.index, l.op, *s)))
        .collect();
    let param_layers = r.u16("parameterized layer count")? as usize;
    if param_layers != expected.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {param_layers} parameterized layers, network has {}",
            expected.len()
        )));
    }
    let mut params = BTreeMap::new();
    for (index, op, spec) in expected {
        let stored = r.u16("layer index")? as usize;
        if stored != index {
            return Err(Error::Checkpoint(format!("expected layer {index}, found layer {stored}")));
        }
        let wshape = match op {
            super::LayerOp::TransposedConv(_) => [spec.in_channels, spec.out_channels, spec.kernel, spec.kernel],
            _ => [spec.out_channels, spec.in_channels, spec.kernel, spec.kernel],
        };
        let weight = r.tensor(&format!("layer {index} weight"), &wshape)?;
        let bias = r.tensor(&format!("layer {index} bias"), &[spec.out_channels])?;
        params.insert(
            index,
            LayerParams {
                weight: ParamTensor::new(weight),
                bias: ParamTensor::new(bias),
            },
        );
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    super::audit_layers(&layers)?;
    Ok(CrayonModel { layers, params })
}

pub fn load_checkpoint(path: &Path) -> Result<CrayonModel> {
    decode_checkpoint(&fs::read(path)?)
}
