//! `DTSS` checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DTSS" | u32 version | u32 len | config JSON (len bytes)
//! u32 tensor count
//! repeated: u32 name len | name | u8 ndim | ndim x u32 extents | f32 payload
//! ```
//!
//! Tensors are the trainable parameters in registry order followed by each
//! batch-norm layer's `<name>.running_mean` and `<name>.running_var`.

use std::io::{Read, Write};
use std::path::Path;

use super::{DualTsst, ModelConfig, RunningStats};
use crate::dataio::format::{read_u32, read_u8};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DTSS";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn write_checkpoint(path: &Path, model: &DualTsst) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(model.config())?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    let count = model.params().len() + 2 * model.running_stats().len();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (name, t) in model.params().names().iter().zip(model.params().tensors()) {
        put_tensor(&mut out, name, t.shape(), t.data());
    }
    for r in model.running_stats() {
        put_tensor(&mut out, &format!("{}.running_mean", r.name), &[r.mean.len()], &r.mean);
        put_tensor(&mut out, &format!("{}.running_var", r.name), &[r.var.len()], &r.var);
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_checkpoint(path: &Path) -> Result<DualTsst> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let bad = |detail: String| Error::Format { path: path.to_path_buf(), detail };
    let mut r = bytes.as_slice();
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r).map_err(bad)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let cfg_len = read_u32(&mut r).map_err(bad)? as usize;
    if cfg_len > r.len() {
        return Err(bad("truncated config".into()));
    }
    let (cfg_bytes, rest) = r.split_at(cfg_len);
    r = rest;
    let cfg: ModelConfig = serde_json::from_slice(cfg_bytes).map_err(|e| bad(format!("config: {e}")))?;
    let count = read_u32(&mut r).map_err(bad)? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = read_u32(&mut r).map_err(bad)? as usize;
        if name_len > r.len() {
            return Err(bad("truncated tensor name".into()));
        }
        let (name, rest) = r.split_at(name_len);
        r = rest;
        let name = String::from_utf8(name.to_vec()).map_err(|_| bad("non-UTF-8 tensor name".into()))?;
        let ndim = read_u8(&mut r).map_err(bad)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r).map_err(bad)? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.len()))
            .ok_or_else(|| bad(format!("tensor {name}: payload for {shape:?} truncated or too large")))?;
        let (payload, rest) = r.split_at(n * 4);
        r = rest;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        tensors.push((name, Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?));
    }
    if !r.is_empty() {
        return Err(bad(format!("{} trailing bytes", r.len())));
    }
    let mut rng = crate::rng::stream(0, crate::rng::Stream::Init);
    let template = DualTsst::new(cfg.clone(), &mut rng)?;
    let n_params = template.params().len();
    if tensors.len() != n_params + 2 * template.running_stats().len() {
        return Err(bad(format!(
            "{} tensors for a model needing {}",
            tensors.len(),
            n_params + 2 * template.running_stats().len()
        )));
    }
    let running_tensors = tensors.split_off(n_params);
    let running = template
        .running_stats()
        .iter()
        .zip(running_tensors.chunks(2))
        .map(|(slot, pair)| {
            let expect = [format!("{}.running_mean", slot.name), format!("{}.running_var", slot.name)];
            if pair[0].0 != expect[0] || pair[1].0 != expect[1] {
                return Err(bad(format!("expected {expect:?}, found {} / {}", pair[0].0, pair[1].0)));
            }
            Ok(RunningStats {
                name: slot.name.clone(),
                mean: pair[0].1.data().to_vec(),
                var: pair[1].1.data().to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DualTsst::from_parts(cfg, tensors, running).map_err(|e| bad(e.to_string()))
}
