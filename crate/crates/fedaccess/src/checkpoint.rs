//! Model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! b"FAMD"  u32 version  u32 layer_count
//! per layer: u32 in_dim  u32 out_dim
//! per layer: f64 weights (row-major, out_dim x in_dim), then f64 bias
//! ```

use std::path::Path;

use fedaccess_core::nn::{Layer, Model};

pub const MAGIC: &[u8; 4] = b"FAMD";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("{0} trailing bytes after checkpoint")]
    Trailing(usize),
    #[error("invalid model: {0}")]
    Model(#[from] fedaccess_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * model.layers().len() + 8 * model.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for l in model.layers() {
        out.extend_from_slice(&(l.in_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(l.out_dim() as u32).to_le_bytes());
    }
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model, CheckpointError> {
    let mut r = Reader { bytes };
    if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = r.u32()? as usize;
    let dims: Vec<(usize, usize)> =
        (0..count).map(|_| Ok((r.u32()? as usize, r.u32()? as usize))).collect::<Result<_, CheckpointError>>()?;
    let mut layers = Vec::with_capacity(count);
    for (in_dim, out_dim) in dims {
        let weights = r.f64s(in_dim.saturating_mul(out_dim))?;
        let bias = r.f64s(out_dim)?;
        layers.push(Layer::new(in_dim, out_dim, weights, bias)?);
    }
    if !r.bytes.is_empty() {
        return Err(CheckpointError::Trailing(r.bytes.len()));
    }
    Ok(Model::from_layers(layers)?)
}

pub fn save(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    crate::output::write_atomic(path, &encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model, CheckpointError> {
    decode(&std::fs::read(path)?)
}
