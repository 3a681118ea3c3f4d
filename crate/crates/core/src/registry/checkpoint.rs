use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::models::{ModelSpec, ParamVector};

const MAGIC: &str = "slt-lab-checkpoint";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Write `bytes` to a sibling temp file and rename it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidConfig(format!("bad output path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_file_name(step: usize) -> String {
    format!("ckpt_{step}.bin")
}

/// One header line of `key=value` pairs followed by the parameters as little-endian f64.
pub fn encode_checkpoint(spec: &ModelSpec, step: usize, params: &ParamVector) -> Result<Vec<u8>> {
    let layout = spec.layout();
    if params.len() != layout.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} parameters for a {}-parameter {} model",
            params.len(),
            layout.len(),
            spec.family().as_str()
        )));
    }
    let header = format!(
        "{MAGIC} format_version={CHECKPOINT_FORMAT_VERSION} family={} step={step} param_count={} encoding=f64 endianness=little layout={}\n",
        spec.family().as_str(),
        layout.len(),
        layout.digest()
    );
    let mut out = Vec::with_capacity(header.len() + 8 * params.len());
    out.extend_from_slice(header.as_bytes());
    for v in &params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parse a checkpoint written for `spec`, returning its step and parameters.
pub fn decode_checkpoint(path: &Path, bytes: &[u8], spec: &ModelSpec) -> Result<(usize, ParamVector)> {
    let mismatch = |reason: String| Error::LayoutMismatch {
        path: path.to_path_buf(),
        reason,
    };
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| mismatch("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| mismatch("header is not utf-8".into()))?;
    let mut fields = header.split(' ');
    if fields.next() != Some(MAGIC) {
        return Err(mismatch("not a checkpoint file".into()));
    }
    let mut get = std::collections::HashMap::new();
    for kv in fields {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| mismatch(format!("malformed header field `{kv}`")))?;
        get.insert(k, v);
    }
    let field = |k: &str| {
        get.get(k)
            .copied()
            .ok_or_else(|| mismatch(format!("header lacks `{k}`")))
    };
    if field("encoding")? != "f64" || field("endianness")? != "little" {
        return Err(mismatch("unsupported value encoding".into()));
    }
    let layout = spec.layout();
    if field("family")? != spec.family().as_str() {
        return Err(mismatch(format!(
            "family {} but expected {}",
            field("family")?,
            spec.family().as_str()
        )));
    }
    if field("layout")? != layout.digest() {
        return Err(mismatch("layout digest differs from model spec".into()));
    }
    let count: usize = field("param_count")?
        .parse()
        .map_err(|_| mismatch("bad param_count".into()))?;
    let step: usize = field("step")?
        .parse()
        .map_err(|_| mismatch("bad step".into()))?;
    if count != layout.len() {
        return Err(mismatch(format!(
            "param_count {count} but layout has {}",
            layout.len()
        )));
    }
    let payload = &bytes[newline + 1..];
    if payload.len() != 8 * count {
        return Err(mismatch(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            8 * count
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let params = ParamVector::new(spec, values).map_err(|e| mismatch(e.to_string()))?;
    Ok((step, params))
}

pub fn write_checkpoint(dir: &Path, spec: &ModelSpec, step: usize, params: &ParamVector) -> Result<PathBuf> {
    let path = dir.join(checkpoint_file_name(step));
    write_atomic(&path, &encode_checkpoint(spec, step, params)?)?;
    Ok(path)
}

pub fn read_checkpoint(path: &Path, spec: &ModelSpec) -> Result<(usize, ParamVector)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(path, &bytes, spec)
}
