//! Model checkpoints: a binary tensor blob plus a JSON sidecar.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic    8 bytes  b"SCALMLP\0"
//! version  u32      CHECKPOINT_VERSION
//! count    u32      number of tensors
//! per tensor:
//!   rank   u32      1 or 2
//!   dims   u64 x rank
//!   data   f64 x prod(dims), row-major
//! ```
//!
//! Tensors appear in layer order, weight before bias. The sidecar lives next
//! to the blob with a `.json` extension and records the architecture.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Dense, Mlp, MlpConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SCALMLP\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    format_version: u32,
    architecture: MlpConfig,
    normalize_embeddings: bool,
    tensors: Vec<String>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_checkpoint(model: &Mlp, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&((model.layers.len() * 2) as u32).to_le_bytes());
    let mut names = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        let (r, c) = layer.weight.dim();
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(r as u64).to_le_bytes());
        buf.extend_from_slice(&(c as u64).to_le_bytes());
        for v in layer.weight.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&(layer.bias.len() as u64).to_le_bytes());
        for v in layer.bias.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        names.push(format!("layer{i}.weight"));
        names.push(format!("layer{i}.bias"));
    }
    fs::write(path, buf)?;
    let sidecar = Sidecar {
        format_version: CHECKPOINT_VERSION,
        architecture: model.config.clone(),
        normalize_embeddings: model.normalize_embeddings,
        tensors: names,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated blob".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint("dimension overflow".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Mlp> {
    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if sidecar.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported sidecar version {}",
            sidecar.format_version
        )));
    }
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported blob version {version}")));
    }
    let count = r.u32()? as usize;
    if !count.is_multiple_of(2) {
        return Err(Error::Checkpoint("odd tensor count".into()));
    }
    let mut layers = Vec::with_capacity(count / 2);
    for _ in 0..count / 2 {
        if r.u32()? != 2 {
            return Err(Error::Checkpoint("expected a rank-2 weight".into()));
        }
        let (rows, cols) = (r.u64()?, r.u64()?);
        let weight =
            Array2::from_shape_vec((rows, cols), r.f64s(rows * cols)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if r.u32()? != 1 {
            return Err(Error::Checkpoint("expected a rank-1 bias".into()));
        }
        let len = r.u64()?;
        let bias = Array1::from(r.f64s(len)?);
        layers.push(Dense { weight, bias });
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Mlp::from_parts(sidecar.architecture, layers, sidecar.normalize_embeddings)
}
