//! `EEGT` tensor files: `"EEGT" | u32 version=1 | u8 ndim | ndim x u32
//! extents | little-endian f32 payload`, row-major.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"EEGT";
pub const TENSOR_VERSION: u32 = 1;

pub(crate) fn read_u32(r: &mut &[u8]) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| "truncated integer".to_string())?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u8(r: &mut &[u8]) -> std::result::Result<u8, String> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(|_| "truncated integer".to_string())?;
    Ok(b[0])
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 4 * t.ndim() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |detail: String| Error::Format { path: path.to_path_buf(), detail };
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header".into()))?;
    if &magic != TENSOR_MAGIC {
        return Err(bad(format!("bad magic {:?}", String::from_utf8_lossy(&magic))));
    }
    let version = read_u32(&mut r).map_err(bad)?;
    if version != TENSOR_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let ndim = read_u8(&mut r).map_err(bad)? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u32(&mut r).map_err(bad)? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4).map(|_| n))
        .ok_or_else(|| bad(format!("extents {shape:?} overflow")))?;
    if r.len() != n * 4 {
        return Err(bad(format!("payload has {} bytes, shape {shape:?} needs {}", r.len(), n * 4)));
    }
    let data = r.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Tensor::new(shape, data).map_err(|e| bad(e.to_string()))
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    std::fs::write(path, encode_tensor(t)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_tensor(&bytes, path)
}
