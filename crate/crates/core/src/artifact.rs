//! Binary artifact container: a single-line JSON header terminated by `\n`,
//! followed by a raw little-endian `f32` payload.
//!
//! Used for projection matrices, detector checkpoints and relevance caches.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn encode<H: Serialize>(header: &H, payload: &[f32]) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(header).map_err(|e| Error::Format(format!("cannot serialize header: {e}")))?;
    out.push(b'\n');
    out.reserve(payload.len() * 4);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, Vec<f32>)> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header terminator".into()))?;
    let header: H = serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let body = &bytes[newline + 1..];
    if !body.len().is_multiple_of(4) {
        return Err(Error::Format(format!(
            "payload length {} is not a multiple of 4",
            body.len()
        )));
    }
    let payload = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, payload))
}

/// Writes through a sibling temp file and renames, so readers never observe a
/// half-written artifact.
pub fn write_file<H: Serialize>(path: &Path, header: &H, payload: &[f32]) -> Result<()> {
    let bytes = encode(header, payload)?;
    write_atomic(path, &bytes)
}

pub fn read_file<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("{} has no file name", path.display())))?
        .to_string_lossy()
        .into_owned();
    let tmp = path.with_file_name(format!(".{file_name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn to_f32(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}
