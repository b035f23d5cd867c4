//! Binary checkpoint format.
//!
//! ```text
//! "DTSE" | u32 version | u32 n | n bytes ModelConfig JSON | u32 count
//! per tensor: u16 len | name | u8 dtype | u8 trainable | u8 ndim | u32 dims… | f32 data…
//! ```
//! All integers and floats are little-endian. Only dtype 0 (f32) exists.

use std::path::Path;

use thiserror::Error;

use crate::checkpoint::{parameter_layout, Checkpoint, FORMAT_VERSION};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DTSE";
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("unsupported dtype {dtype} for tensor `{name}`")]
    UnsupportedDtype { name: String, dtype: u8 },
    #[error("invalid embedded config: {0}")]
    BadConfig(String),
    #[error("malformed record for tensor `{name}`: {detail}")]
    BadRecord { name: String, detail: String },
    #[error("{0} unexpected bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("checkpoint lacks tensor `{0}` required by its config")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?}, config expects {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
}

/// Serializes every entry of `ckpt`, in name order.
pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let config = serde_json::to_vec(&ckpt.config).expect("config serializes");
    let mut out = Vec::with_capacity(16 + config.len() + 4 * ckpt.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(ckpt.len() as u32).to_le_bytes());
    for (name, entry) in ckpt.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(entry.trainable as u8);
        let shape = entry.tensor.shape();
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in entry.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CodecError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> std::result::Result<u8, CodecError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> std::result::Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> std::result::Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint without checking it against its config's layout.
pub fn decode(bytes: &[u8]) -> std::result::Result<Checkpoint, CodecError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic").map_err(|_| CodecError::BadMagic)? != MAGIC {
        return Err(CodecError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let cfg_len = r.u32("config length")? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(cfg_len, "config")?)
        .map_err(|e| CodecError::BadConfig(e.to_string()))?;
    let count = r.u32("tensor count")?;
    let mut ckpt = Checkpoint::empty(config);
    for _ in 0..count {
        let name_len = r.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| CodecError::BadRecord {
                name: String::from_utf8_lossy(&bytes[r.pos - name_len..r.pos]).into_owned(),
                detail: "name is not UTF-8".into(),
            })?
            .to_string();
        let bad = |detail: String| CodecError::BadRecord {
            name: name.clone(),
            detail,
        };
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(CodecError::UnsupportedDtype { name, dtype });
        }
        let trainable = match r.u8("trainable flag")? {
            0 => false,
            1 => true,
            v => return Err(bad(format!("trainable flag {v}"))),
        };
        let ndim = r.u8("rank")? as usize;
        if !(1..=3).contains(&ndim) {
            return Err(bad(format!("rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("dims")? as usize);
        }
        if shape.contains(&0) {
            return Err(bad(format!("zero dimension in {shape:?}")));
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| bad(format!("shape {shape:?} overflows")))?;
        let data = r
            .take(n, "tensor payload")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?;
        ckpt.insert(name, tensor, trainable);
    }
    if r.pos != bytes.len() {
        return Err(CodecError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(ckpt)
}

/// Checks that every tensor the config's network needs is present with its
/// expected shape.
pub fn check_layout(ckpt: &Checkpoint) -> std::result::Result<(), CodecError> {
    ckpt.config
        .validate()
        .map_err(|e| CodecError::BadConfig(e.to_string()))?;
    for spec in parameter_layout(&ckpt.config) {
        let entry = ckpt
            .iter()
            .find(|(n, _)| **n == spec.name)
            .map(|(_, e)| e)
            .ok_or_else(|| CodecError::MissingTensor(spec.name.clone()))?;
        if entry.tensor.shape() != spec.shape.as_slice() {
            return Err(CodecError::ShapeMismatch {
                name: spec.name,
                found: entry.tensor.shape().to_vec(),
                expected: spec.shape,
            });
        }
    }
    Ok(())
}

pub fn save(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(ckpt))?;
    Ok(())
}

/// Reads a checkpoint and checks it against the layout its config implies.
pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let ckpt = decode(&bytes)?;
    check_layout(&ckpt)?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Checkpoint {
        Checkpoint::init(ModelConfig::micro(), 3).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ckpt = small();
        ckpt.set_trainable("decoder.weight", false).unwrap();
        ckpt.tensor_mut("fuse.alpha").unwrap().data_mut()[0] = f32::from_bits(0x7f7f_ffff);
        let back = decode(&encode(&ckpt)).unwrap();
        assert_eq!(back, ckpt);
        assert!(!back.entry("decoder.weight").unwrap().trainable);
        check_layout(&back).unwrap();
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&small());
        assert_eq!(&bytes[..4], b"DTSE");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn corruptions_are_distinguished() {
        let good = encode(&small());
        let mut b = good.clone();
        b[0] = b'X';
        assert_eq!(decode(&b).unwrap_err(), CodecError::BadMagic);
        let mut b = good.clone();
        b[4] = 2;
        assert_eq!(decode(&b).unwrap_err(), CodecError::UnsupportedVersion(2));
        assert!(matches!(
            decode(&good[..good.len() - 3]).unwrap_err(),
            CodecError::Truncated(_)
        ));
        let mut b = good.clone();
        b.push(0);
        assert_eq!(decode(&b).unwrap_err(), CodecError::TrailingBytes(1));
        let mut ckpt = small();
        let mut reduced = Checkpoint::empty(ckpt.config.clone());
        for (n, e) in ckpt.iter().filter(|(n, _)| n.as_str() != "decoder.weight") {
            reduced.insert(n.clone(), e.tensor.clone(), e.trainable);
        }
        let err = check_layout(&decode(&encode(&reduced)).unwrap()).unwrap_err();
        assert_eq!(err, CodecError::MissingTensor("decoder.weight".into()));
        ckpt.insert("decoder.weight", Tensor::zeros(vec![2, 2]), true);
        assert!(matches!(
            check_layout(&ckpt).unwrap_err(),
            CodecError::ShapeMismatch { .. }
        ));
    }
}
