//! `ACSF` feature files.
//!
//! ```text
//! "ACSF" | version: u32 LE = 1 | header_len: u32 LE | header JSON (UTF-8)
//!        | payload: samples*height*width*dim f32 LE
//! ```
//!
//! The header is `{"side","stage","samples","height","width","dim","seed"}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{checked_len, FeatureSet, Side};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"ACSF";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    side: Side,
    stage: u32,
    samples: usize,
    height: usize,
    width: usize,
    dim: usize,
    seed: u64,
}

pub(crate) fn encode(fs: &FeatureSet) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        side: fs.side,
        stage: fs.stage,
        samples: fs.samples,
        height: fs.height,
        width: fs.width,
        dim: fs.dim,
        seed: fs.seed,
    })?;
    let mut out = Vec::with_capacity(12 + header.len() + fs.data.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in &fs.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], offset: usize, n: usize, what: &str) -> Result<&'a [u8]> {
    bytes
        .get(offset..offset + n)
        .ok_or_else(|| Error::format(offset as u64, format!("truncated {what}")))
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let b = take(bytes, offset, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub(crate) fn decode(bytes: &[u8]) -> Result<FeatureSet> {
    let magic = take(bytes, 0, 4, "magic")?;
    if magic != FEATURE_MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let version = read_u32(bytes, 4, "version")?;
    if version != FEATURE_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let header_len = read_u32(bytes, 8, "header length")? as usize;
    let header_bytes = take(bytes, 12, header_len, "header")?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::format(12, format!("invalid header: {e}")))?;
    let payload_start = 12 + header_len;
    let count = checked_len(header.samples, header.height, header.width, header.dim)?;
    let payload = bytes.get(payload_start..).unwrap_or(&[]);
    if payload.len() < count * 4 {
        return Err(Error::format(
            (payload_start + payload.len()) as u64,
            format!("truncated payload: expected {} bytes, found {}", count * 4, payload.len()),
        ));
    }
    if payload.len() > count * 4 {
        return Err(Error::format(
            (payload_start + count * 4) as u64,
            "trailing bytes after payload",
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format((payload_start + 4 * i) as u64, "non-finite value"));
    }
    FeatureSet::new(
        header.side,
        header.stage,
        header.samples,
        header.height,
        header.width,
        header.dim,
        header.seed,
        data,
    )
}

pub fn write_feature_file(fs: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(fs)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
