//! MMF1 binary feature files.
//!
//! Layout (all little-endian):
//! ```text
//! offset  size  field
//! 0       4     magic "MMF1"
//! 4       4     u32 version = 1
//! 8       4     u32 n (frames)
//! 12      4     u32 d (feature dim)
//! 16      n*d*4 IEEE-754 float32 payload, row-major
//! ```
//! Values are stored as f32 on disk and widened to f64 in memory, so a
//! write/read round trip is lossless for tensors whose values are exactly
//! representable in f32.

use crate::error::{Error, Result};
use crate::fusion::{FeatureSequence, Modality};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"MMF1";
const VERSION: u32 = 1;

fn file_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::FeatureFile { path: path.display().to_string(), reason: reason.into() }
}

pub fn write_feature_file(seq: &FeatureSequence, path: &Path) -> Result<()> {
    let (n, d) = (seq.len(), seq.dim());
    let mut buf = Vec::with_capacity(16 + n * d * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in seq.frames.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_feature_file(path: &Path, modality: Modality) -> Result<FeatureSequence> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(file_err(path, format!("truncated header: {} bytes", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(file_err(path, "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(file_err(path, format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if n == 0 || d == 0 {
        return Err(file_err(path, format!("empty dimensions n={n}, d={d}")));
    }
    let expected = 16 + n * d * 4;
    if bytes.len() < expected {
        return Err(file_err(
            path,
            format!("truncated payload: have {} bytes, header declares {expected}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(file_err(path, "trailing bytes after payload"));
    }
    let mut data = Vec::with_capacity(n * d);
    for chunk in bytes[16..].chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(file_err(path, format!("non-finite value {v}")));
        }
        data.push(v as f64);
    }
    FeatureSequence::new(modality, Tensor::new(vec![n, d], data)?)
}
