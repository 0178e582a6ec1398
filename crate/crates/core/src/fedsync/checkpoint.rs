//! Binary twin checkpoints: a fixed header followed by the parameters.

use crate::error::{Error, Result};
use crate::params::ParamVec;

const MAGIC: &[u8; 4] = b"DNTC";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub cluster_id: u64,
    pub version: u64,
    pub window: u64,
    pub params: ParamVec<f64>,
}

/// Layout: `DNTC`, then `cluster_id`, `version`, `window` as little-endian
/// `u64`, then the parameter vector encoding.
pub fn write_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + 8 * (ck.params.len() + 1));
    out.extend_from_slice(MAGIC);
    for v in [ck.cluster_id, ck.version, ck.window] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&ck.params.to_bytes());
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(Error::Schema("not a twin checkpoint".into()));
    }
    let field = |i: usize| -> Result<u64> {
        let start = 4 + 8 * i;
        bytes
            .get(start..start + 8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .ok_or_else(|| Error::Schema("truncated checkpoint header".into()))
    };
    let (cluster_id, version, window) = (field(0)?, field(1)?, field(2)?);
    let (params, used) = ParamVec::from_bytes(&bytes[28..])?;
    if 28 + used != bytes.len() {
        return Err(Error::Schema("trailing bytes after checkpoint".into()));
    }
    if params.len() as u64 != window + 1 {
        return Err(Error::Dimension {
            expected: window as usize + 1,
            got: params.len(),
        });
    }
    Ok(Checkpoint {
        cluster_id,
        version,
        window,
        params,
    })
}
