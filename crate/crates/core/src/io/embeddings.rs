//! `RQEMB` embedding files.
//!
//! ```text
//! {"magic":"RQEMB","version":1,"n":N,"d":D,"dtype":"f32","row_major":true,"ids":false}\n
//! N*D little-endian f32 or f64 values, row-major
//! if ids: N lines of UTF-8 item keys, each terminated by \n
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{check_key, header_line, read_file, split_header, write_file};
use crate::quantizer::EmbeddingMatrix;

pub const MAGIC: &str = "RQEMB";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u32,
    n: u64,
    d: u64,
    dtype: Dtype,
    row_major: bool,
    #[serde(default)]
    ids: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub matrix: EmbeddingMatrix,
    pub dtype: Dtype,
    pub ids: Option<Vec<String>>,
}

impl EmbeddingFile {
    pub fn new(matrix: EmbeddingMatrix, dtype: Dtype) -> Self {
        Self {
            matrix,
            dtype,
            ids: None,
        }
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.matrix.n() {
            return Err(Error::DimensionMismatch {
                expected: self.matrix.n(),
                got: ids.len(),
            });
        }
        for k in &ids {
            check_key(k)?;
        }
        self.ids = Some(ids);
        Ok(self)
    }

    /// Item key of each row: the stored id, or the row number.
    pub fn keys(&self) -> Vec<String> {
        match &self.ids {
            Some(ids) => ids.clone(),
            None => (0..self.matrix.n()).map(|i| i.to_string()).collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.matrix;
        let header = Header {
            magic: MAGIC.into(),
            version: VERSION,
            n: m.n() as u64,
            d: m.d() as u64,
            dtype: self.dtype,
            row_major: true,
            ids: self.ids.is_some(),
        };
        let mut out = header_line(&header);
        out.reserve(m.as_slice().len() * self.dtype.size());
        match self.dtype {
            Dtype::F32 => {
                for &v in m.as_slice() {
                    let narrow = v as f32;
                    if !narrow.is_finite() {
                        return Err(Error::InvalidArgument(format!("{v} does not fit in f32")));
                    }
                    out.extend_from_slice(&narrow.to_le_bytes());
                }
            }
            Dtype::F64 => m.as_slice().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
        if let Some(ids) = &self.ids {
            for k in ids {
                check_key(k)?;
                out.extend_from_slice(k.as_bytes());
                out.push(b'\n');
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, start): (Header, usize) = split_header(bytes, MAGIC, VERSION)?;
        if !header.row_major {
            return Err(Error::BadHeader {
                offset: 0,
                reason: "only row-major payloads are supported".into(),
            });
        }
        let (n, d) = (header.n as usize, header.d as usize);
        let size = header.dtype.size() as u64;
        let expected = header.n.checked_mul(header.d).and_then(|v| v.checked_mul(size)).ok_or_else(|| {
            Error::BadHeader {
                offset: 0,
                reason: "n * d overflows".into(),
            }
        })?;
        let rest = (bytes.len() - start) as u64;
        let size_ok = if header.ids { rest >= expected } else { rest == expected };
        if !size_ok {
            return Err(Error::SizeMismatch {
                offset: start as u64,
                expected,
                found: rest,
            });
        }
        let payload = &bytes[start..start + expected as usize];
        let mut data = Vec::with_capacity(n * d);
        match header.dtype {
            Dtype::F32 => {
                for (i, c) in payload.chunks_exact(4).enumerate() {
                    let v = f32::from_le_bytes(c.try_into().unwrap());
                    if !v.is_finite() {
                        return Err(Error::NonFinitePayload {
                            offset: (start + 4 * i) as u64,
                        });
                    }
                    data.push(f64::from(v));
                }
            }
            Dtype::F64 => {
                for (i, c) in payload.chunks_exact(8).enumerate() {
                    let v = f64::from_le_bytes(c.try_into().unwrap());
                    if !v.is_finite() {
                        return Err(Error::NonFinitePayload {
                            offset: (start + 8 * i) as u64,
                        });
                    }
                    data.push(v);
                }
            }
        }
        let matrix = EmbeddingMatrix::new(data, n, d)?;
        let ids = if header.ids {
            let tail_start = start + expected as usize;
            let tail = std::str::from_utf8(&bytes[tail_start..]).map_err(|e| Error::BadHeader {
                offset: (tail_start + e.valid_up_to()) as u64,
                reason: "item keys are not valid UTF-8".into(),
            })?;
            let keys: Vec<String> = tail.split_terminator('\n').map(str::to_string).collect();
            if keys.len() != n || !tail.ends_with('\n') && n > 0 {
                return Err(Error::Truncated {
                    what: format!("item keys ({} of {n})", keys.len()),
                    offset: bytes.len() as u64,
                });
            }
            Some(keys)
        } else {
            None
        };
        Ok(Self {
            matrix,
            dtype: header.dtype,
            ids,
        })
    }
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingFile> {
    let path = path.as_ref();
    EmbeddingFile::from_bytes(&read_file(path)?).map_err(|e| e.in_file(path))
}

pub fn write_embeddings(file: &EmbeddingFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = file.to_bytes().map_err(|e| e.in_file(path))?;
    write_file(path, &bytes)
}
