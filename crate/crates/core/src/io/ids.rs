//! Semantic-ID tables: one `key\tk_1\t...\tk_L\n` line per item, no header.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{check_key, read_file, write_file};
use crate::rq::SemanticId;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IdTable {
    pub keys: Vec<String>,
    pub ids: Vec<SemanticId>,
}

impl IdTable {
    pub fn new(keys: Vec<String>, ids: Vec<SemanticId>) -> Result<Self> {
        if keys.len() != ids.len() {
            return Err(Error::DimensionMismatch {
                expected: keys.len(),
                got: ids.len(),
            });
        }
        let table = Self { keys, ids };
        table.levels()?;
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Number of codes per row; every row must agree. Empty tables have 0.
    pub fn levels(&self) -> Result<usize> {
        let levels = self.ids.first().map_or(0, SemanticId::len);
        for (i, id) in self.ids.iter().enumerate() {
            if id.len() != levels {
                return Err(Error::BadTable {
                    line: i + 1,
                    reason: format!("{} codes, expected {levels}", id.len()),
                });
            }
        }
        Ok(levels)
    }

    /// Checks the row shape against a model with `levels` levels of `k` codes.
    pub fn validate(&self, levels: usize, k: usize) -> Result<()> {
        for (i, id) in self.ids.iter().enumerate() {
            if id.len() != levels {
                return Err(Error::BadTable {
                    line: i + 1,
                    reason: format!("{} codes, expected {levels}", id.len()),
                });
            }
            if let Some(&c) = id.codes().iter().find(|&&c| c as usize >= k) {
                return Err(Error::BadTable {
                    line: i + 1,
                    reason: format!("code {c} is not below K={k}"),
                });
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        for (key, id) in self.keys.iter().zip(&self.ids) {
            check_key(key)?;
            out.push_str(key);
            for c in id.codes() {
                let _ = write!(out, "\t{c}");
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut keys = Vec::new();
        let mut ids = Vec::new();
        for (i, line) in text.split_terminator('\n').enumerate() {
            let mut fields = line.split('\t');
            let key = fields.next().unwrap_or_default();
            if key.is_empty() {
                return Err(Error::BadTable {
                    line: i + 1,
                    reason: "empty item key".into(),
                });
            }
            let codes = fields
                .map(|f| {
                    f.parse::<u32>().map_err(|_| Error::BadTable {
                        line: i + 1,
                        reason: format!("{f:?} is not a code index"),
                    })
                })
                .collect::<Result<Vec<u32>>>()?;
            keys.push(key.to_string());
            ids.push(SemanticId(codes));
        }
        Self::new(keys, ids)
    }
}

pub fn read_id_table(path: impl AsRef<Path>) -> Result<IdTable> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| {
        Error::BadHeader {
            offset: e.valid_up_to() as u64,
            reason: "table is not valid UTF-8".into(),
        }
        .in_file(path)
    })?;
    IdTable::parse(text).map_err(|e| e.in_file(path))
}

pub fn write_id_table(table: &IdTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = table.to_text().map_err(|e| e.in_file(path))?;
    write_file(path, text.as_bytes())
}
