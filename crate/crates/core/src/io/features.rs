//! Appending semantic-ID columns to a feature table.
//!
//! The base table is tab separated with a header row whose first column is
//! `item_key`. The output keeps every base row in its original order and
//! appends `sid_1 .. sid_L`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ids::IdTable;

pub const KEY_COLUMN: &str = "item_key";

/// What to do with a base row whose key has no semantic ID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    #[default]
    Fail,
    /// Write `-1` in every ID column. Zero is a valid code, so it cannot
    /// serve as the marker.
    Fill,
}

impl FromStr for MissingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fail" => Ok(Self::Fail),
            "fill" => Ok(Self::Fill),
            _ => Err(Error::InvalidArgument(format!("unknown missing-key policy {s:?}"))),
        }
    }
}

pub fn export_features(ids: &IdTable, base: &str, policy: MissingPolicy) -> Result<String> {
    let levels = ids.levels()?;
    let mut index: HashMap<&str, usize> = HashMap::with_capacity(ids.len());
    for (i, key) in ids.keys.iter().enumerate() {
        if index.insert(key.as_str(), i).is_some() {
            return Err(Error::BadTable {
                line: i + 1,
                reason: format!("duplicate item key {key:?} in the ID table"),
            });
        }
    }

    let mut lines = base.split_terminator('\n');
    let header = lines.next().ok_or(Error::EmptyInput("base feature table"))?;
    let columns = header.split('\t').count();
    if header.split('\t').next() != Some(KEY_COLUMN) {
        return Err(Error::BadTable {
            line: 1,
            reason: format!("first column must be {KEY_COLUMN:?}"),
        });
    }
    let mut out = String::with_capacity(base.len() + base.len() / 2);
    out.push_str(header);
    for l in 1..=levels {
        let _ = write!(out, "\tsid_{l}");
    }
    out.push('\n');

    for (i, line) in lines.enumerate() {
        let fields = line.split('\t').count();
        if fields != columns {
            return Err(Error::BadTable {
                line: i + 2,
                reason: format!("{fields} fields, header has {columns}"),
            });
        }
        let key = line.split('\t').next().unwrap_or_default();
        out.push_str(line);
        match (index.get(key), policy) {
            (Some(&row), _) => {
                for c in ids.ids[row].codes() {
                    let _ = write!(out, "\t{c}");
                }
            }
            (None, MissingPolicy::Fill) => (0..levels).for_each(|_| out.push_str("\t-1")),
            (None, MissingPolicy::Fail) => return Err(Error::MissingKey(key.to_string())),
        }
        out.push('\n');
    }
    Ok(out)
}
