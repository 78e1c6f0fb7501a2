//! Binary model files.
//!
//! Layout (little endian): magic `WRID`, `u32` version, `u8` scalar width,
//! `u32` header length, JSON header `{spec, description, metadata}`, `u64`
//! parameter count, then every parameter tensor in [`Network::params`] order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::network::{Network, NetworkSpec};
use super::tensor::Real;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"WRID";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    description: String,
    metadata: Value,
}

pub fn write_model<T: Real>(net: &Network<T>, metadata: &Value) -> Result<Vec<u8>> {
    let header = Header {
        spec: net.spec().clone(),
        description: net.spec().describe(),
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(Error::json)?;
    let count = net.param_count();
    let mut out = Vec::with_capacity(21 + json.len() + count * T::BYTES as usize);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.push(T::BYTES);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for p in net.params() {
        for &v in p {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::ModelFormat(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a model and its metadata. The stored scalar width must match `T`.
pub fn read_model<T: Real>(bytes: &[u8]) -> Result<(Network<T>, Value)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(Error::ModelFormat("not a model file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported version {version}, expected {MODEL_VERSION}"
        )));
    }
    let width = r.take(1, "scalar width")?[0];
    if width != T::BYTES {
        return Err(Error::ModelFormat(format!(
            "stored {width}-byte scalars, expected {}",
            T::BYTES
        )));
    }
    let len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(len, "header")?)
        .map_err(|e| Error::ModelFormat(format!("bad header: {e}")))?;
    let count = u64::from_le_bytes(r.take(8, "parameter count")?.try_into().unwrap());
    let count = usize::try_from(count)
        .map_err(|_| Error::ModelFormat("parameter count overflow".into()))?;
    let w = T::BYTES as usize;
    let raw = r.take(count.saturating_mul(w), "parameters")?;
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let values: Vec<T> = raw.chunks_exact(w).map(T::read_le).collect();
    let net = Network::from_params(header.spec, &values)?;
    Ok((net, header.metadata))
}

pub fn save_model<T: Real>(path: &Path, net: &Network<T>, metadata: &Value) -> Result<()> {
    let bytes = write_model(net, metadata)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Real>(path: &Path) -> Result<(Network<T>, Value)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_model(&bytes)
}
