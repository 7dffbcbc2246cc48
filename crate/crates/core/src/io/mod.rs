//! On-disk formats.
//!
//! Binary files start with a single-line JSON header terminated by `\n`,
//! followed by a little-endian payload. Readers check the magic string and
//! version before anything else and reject versions they do not know.
//! Text tables are UTF-8, tab separated, `\n` terminated, with no quoting.

pub mod embeddings;
pub mod features;
pub mod ids;
pub mod model;

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::error::{Error, Result};

pub use embeddings::{read_embeddings, write_embeddings, Dtype, EmbeddingFile};
pub use features::{export_features, MissingPolicy};
pub use ids::{read_id_table, write_id_table, IdTable};
pub use model::{model_from_bytes, model_to_bytes, read_model, write_model};

const MAX_HEADER_BYTES: usize = 64 << 20;

/// Splits `bytes` into the parsed header and the offset where the payload
/// starts. Magic and version are checked before the typed parse.
pub(crate) fn split_header<H: DeserializeOwned>(
    bytes: &[u8],
    magic: &'static str,
    version: u32,
) -> Result<(H, usize)> {
    let end = bytes
        .iter()
        .take(MAX_HEADER_BYTES)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Truncated {
            what: "header line".into(),
            offset: bytes.len().min(MAX_HEADER_BYTES) as u64,
        })?;
    let line = &bytes[..end];
    let value: Value = serde_json::from_slice(line).map_err(|e| Error::BadHeader {
        offset: e.column().saturating_sub(1) as u64,
        reason: e.to_string(),
    })?;
    let found = value.get("magic").and_then(Value::as_str).unwrap_or_default();
    if found != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found: found.to_string(),
        });
    }
    let found_version = value
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::BadHeader {
            offset: 0,
            reason: "missing version".into(),
        })?;
    if found_version != u64::from(version) {
        return Err(Error::UnsupportedVersion {
            found: u32::try_from(found_version).unwrap_or(u32::MAX),
            supported: version,
        });
    }
    let header = serde_json::from_value(value).map_err(|e| Error::BadHeader {
        offset: 0,
        reason: e.to_string(),
    })?;
    Ok((header, end + 1))
}

pub(crate) fn header_line<H: serde::Serialize>(header: &H) -> Vec<u8> {
    let mut line = serde_json::to_vec(header).expect("header serializes");
    line.push(b'\n');
    line
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(e).in_file(path))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io(e).in_file(path))
}

/// Rejects keys that would break the tab-separated layout.
pub(crate) fn check_key(key: &str) -> Result<()> {
    if key.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidArgument(format!(
            "item key {key:?} contains a tab or line break"
        )));
    }
    Ok(())
}
