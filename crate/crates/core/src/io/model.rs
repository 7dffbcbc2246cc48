//! `RQMDL` model files.
//!
//! ```text
//! {"magic":"RQMDL","version":1,"method":"rq-gmm","levels":L,"k":K,"dim":D,"fit":{...}}\n
//! for each level l = 0..L:
//!     means      K*D f64 LE
//!     variances  K*D f64 LE   (rq-gmm only)
//!     weights    K   f64 LE   (rq-gmm only)
//! ```
//!
//! Header fields are written in declaration order, so the same model always
//! produces the same bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GmmLevel;
use crate::io::{header_line, read_file, split_header, write_file};
use crate::kmeans::KmeansLevel;
use crate::quantizer::Codebook;
use crate::rq::{FitReport, Level, Method, RqModel};

pub const MAGIC: &str = "RQMDL";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u32,
    method: Method,
    levels: usize,
    k: usize,
    dim: usize,
    fit: FitReport,
}

fn push_all(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn model_to_bytes(model: &RqModel) -> Vec<u8> {
    let header = Header {
        magic: MAGIC.into(),
        version: VERSION,
        method: model.method(),
        levels: model.num_levels(),
        k: model.k(),
        dim: model.dim(),
        fit: model.fit_report.clone(),
    };
    let mut out = header_line(&header);
    for level in model.levels() {
        match level {
            Level::Gmm(g) => {
                push_all(&mut out, g.means().as_slice());
                push_all(&mut out, g.variances());
                push_all(&mut out, g.weights());
            }
            Level::Kmeans(km) => push_all(&mut out, km.centroids.as_slice()),
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, count: usize, level: usize, what: &str) -> Result<Vec<f64>> {
        let len = count.checked_mul(8).filter(|&b| b <= self.bytes.len() - self.pos);
        let Some(len) = len else {
            return Err(Error::Truncated {
                what: format!("level {level} {what} block"),
                offset: self.bytes.len() as u64,
            });
        };
        let block = &self.bytes[self.pos..self.pos + len];
        let mut out = Vec::with_capacity(count);
        for (i, c) in block.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(c.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinitePayload {
                    offset: (self.pos + 8 * i) as u64,
                });
            }
            out.push(v);
        }
        self.pos += len;
        Ok(out)
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<RqModel> {
    let (header, start): (Header, usize) = split_header(bytes, MAGIC, VERSION)?;
    let Header {
        method,
        levels,
        k,
        dim,
        fit,
        ..
    } = header;
    let bad = |reason: String| Error::BadHeader { offset: 0, reason };
    if levels == 0 || k == 0 || dim == 0 {
        return Err(bad(format!("levels={levels}, k={k}, dim={dim} must all be positive")));
    }
    if fit.levels.len() != levels {
        return Err(bad(format!(
            "fit report describes {} levels, header says {levels}",
            fit.levels.len()
        )));
    }
    let mut cur = Cursor { bytes, pos: start };
    let mut parsed = Vec::with_capacity(levels);
    for l in 0..levels {
        let annotate = |e: Error| Error::LevelFit {
            level: l + 1,
            source: Box::new(e),
        };
        let means = cur.take(k * dim, l + 1, "means")?;
        let means = Codebook::new(means, k, dim)?;
        let level = if method == Method::RqGmm {
            let variances = cur.take(k * dim, l + 1, "variances")?;
            let weights = cur.take(k, l + 1, "weights")?;
            Level::Gmm(GmmLevel::new(means, variances, weights).map_err(annotate)?)
        } else {
            let counts = fit.levels[l].histogram.clone();
            if counts.len() != k {
                return Err(bad(format!("level {} histogram has {} bins, expected {k}", l + 1, counts.len())));
            }
            Level::Kmeans(KmeansLevel::from_parts(means, counts))
        };
        parsed.push(level);
    }
    if cur.pos != bytes.len() {
        return Err(Error::SizeMismatch {
            offset: cur.pos as u64,
            expected: cur.pos as u64,
            found: bytes.len() as u64,
        });
    }
    RqModel::from_levels(method, parsed, fit)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<RqModel> {
    let path = path.as_ref();
    model_from_bytes(&read_file(path)?).map_err(|e| e.in_file(path))
}

pub fn write_model(model: &RqModel, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &model_to_bytes(model))
}
