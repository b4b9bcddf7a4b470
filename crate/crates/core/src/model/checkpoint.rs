//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "LCNN"                      magic
//! u16                         format version (1)
//! u32 x 10                    input_dim window lstm_hidden conv1_filters conv2_filters
//!                             kernel conv_stride pool_kernel pool_stride num_classes
//! u8                          concat flag
//! f64                         dropout_p
//! u16                         tensor count
//! per tensor: u16 name length, name bytes, u8 rank, u32 x rank dims
//! f64 payload                 every tensor, declaration order, row-major
//! ```
//!
//! Loading rejects bad magic, unknown versions, shape tables that disagree
//! with the stored config, and truncated or oversized payloads.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{ModelConfig, ModelParams};

const MAGIC: &[u8; 4] = b"LCNN";
pub const FORMAT_VERSION: u16 = 1;

pub fn encode_checkpoint(params: &ModelParams, cfg: &ModelConfig) -> Result<Vec<u8>> {
    params.check_config(cfg)?;
    let mut out = Vec::with_capacity(64 + params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in config_fields(cfg) {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(cfg.concat as u8);
    out.extend_from_slice(&cfg.dropout_p.to_le_bytes());
    let layout = params.layout();
    out.extend_from_slice(&(layout.len() as u16).to_le_bytes());
    for t in &layout {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.dims.len() as u8);
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for t in params.tensors() {
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn config_fields(cfg: &ModelConfig) -> [usize; 10] {
    [
        cfg.input_dim,
        cfg.window,
        cfg.lstm_hidden,
        cfg.conv1_filters,
        cfg.conv2_filters,
        cfg.kernel,
        cfg.conv_stride,
        cfg.pool_kernel,
        cfg.pool_stride,
        cfg.num_classes,
    ]
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelParams, ModelConfig)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, not an LCNN checkpoint".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let mut f = [0usize; 10];
    for v in f.iter_mut() {
        *v = r.u32()? as usize;
    }
    let concat = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("bad concat flag {other}"))),
    };
    let cfg = ModelConfig {
        input_dim: f[0],
        window: f[1],
        lstm_hidden: f[2],
        conv1_filters: f[3],
        conv2_filters: f[4],
        kernel: f[5],
        conv_stride: f[6],
        pool_kernel: f[7],
        pool_stride: f[8],
        num_classes: f[9],
        concat,
        dropout_p: r.f64()?,
    };
    let mut params = ModelParams::zeros(&cfg)
        .map_err(|e| Error::Format(format!("stored config is invalid: {e}")))?;
    let layout = params.layout();
    let count = r.u16()? as usize;
    if count != layout.len() {
        return Err(Error::Format(format!(
            "shape table has {count} tensors, config implies {}",
            layout.len()
        )));
    }
    for want in &layout {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if name != want.name || dims != want.dims {
            return Err(Error::Format(format!(
                "shape table entry {name} {dims:?} does not match expected {} {:?}",
                want.name, want.dims
            )));
        }
    }
    let expected = params.num_scalars() * 8;
    if bytes.len() - r.pos != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, shape table needs {expected}",
            bytes.len() - r.pos
        )));
    }
    for t in params.tensors_mut() {
        for v in t.as_mut_slice() {
            *v = r.f64()?;
        }
    }
    Ok((params, cfg))
}

pub fn save_checkpoint(params: &ModelParams, cfg: &ModelConfig, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(params, cfg)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, ModelConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Number of `f64` scalars stored in an encoded checkpoint.
pub fn serialized_scalar_count(bytes: &[u8]) -> Result<usize> {
    let (p, _) = decode_checkpoint(bytes)?;
    Ok(p.num_scalars())
}
