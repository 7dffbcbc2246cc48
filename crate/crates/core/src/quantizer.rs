//! Shared numerical primitives: the embedding matrix, residual vectors,
//! codebooks, and the nearest-code lookup used by every quantizer.

use log::warn;

use crate::error::{Error, Result};

/// Row-major matrix of `n` embeddings with `d` coordinates each.
///
/// Values are held as `f64` regardless of the on-disk dtype so that
/// distance comparisons near cluster boundaries are stable.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl EmbeddingMatrix {
    pub fn new(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput("embedding matrix has no rows"));
        }
        if d == 0 {
            return Err(Error::EmptyInput("embedding matrix has zero dimensions"));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        Ok(Self { data, n, d })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(data, rows.len(), d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Per-dimension mean over all rows.
    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.d];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.n as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Per-dimension population variance over all rows.
    pub fn column_variances(&self) -> Vec<f64> {
        let mean = self.column_means();
        let mut var = vec![0.0; self.d];
        for row in self.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let c = v - m;
                *s += c * c;
            }
        }
        let n = self.n as f64;
        var.iter_mut().for_each(|s| *s /= n);
        var
    }
}

/// The residual `r^(l)` left after `level` quantization steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    pub values: Vec<f64>,
    pub level: usize,
}

impl ResidualVector {
    /// Starts a cascade at level 0 from the raw embedding.
    pub fn initial(x: &[f64]) -> Self {
        Self {
            values: x.to_vec(),
            level: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Subtracts the selected code vector and moves to the next level.
    pub fn residual_step(&self, zq: &[f64]) -> Result<ResidualVector> {
        residual_step(self, zq)
    }
}

/// `r^(l) = r^(l-1) - z_q^(l)`.
pub fn residual_step(r: &ResidualVector, zq: &[f64]) -> Result<ResidualVector> {
    if r.values.len() != zq.len() {
        return Err(Error::DimensionMismatch {
            expected: r.values.len(),
            got: zq.len(),
        });
    }
    Ok(ResidualVector {
        values: r.values.iter().zip(zq).map(|(a, b)| a - b).collect(),
        level: r.level + 1,
    })
}

/// `K` code vectors of dimension `D`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    vectors: Vec<f64>,
    k: usize,
    d: usize,
}

impl Codebook {
    pub fn new(vectors: Vec<f64>, k: usize, d: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::EmptyCodebook);
        }
        if d == 0 {
            return Err(Error::EmptyInput("codebook vectors have zero dimensions"));
        }
        if vectors.len() != k * d {
            return Err(Error::DimensionMismatch {
                expected: k * d,
                got: vectors.len(),
            });
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        Ok(Self { vectors, k, d })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyCodebook);
        }
        let m = EmbeddingMatrix::from_rows(rows)?;
        let (n, d) = (m.n(), m.d());
        Self::new(m.into_vec(), n, d)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.d..(k + 1) * self.d]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.vectors.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vectors
    }

    /// Index pairs `(a, b)`, `a < b`, whose vectors are bitwise equal.
    pub fn duplicate_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for a in 0..self.k {
            for b in a + 1..self.k {
                if self.vector(a) == self.vector(b) {
                    pairs.push((a, b));
                }
            }
        }
        pairs
    }

    /// Logs a warning when the fitted codebook contains exact duplicates.
    /// Returns whether it did.
    pub(crate) fn warn_if_degenerate(&self, what: &str) -> bool {
        let dups = self.duplicate_pairs();
        if let Some(&(a, b)) = dups.first() {
            warn!(
                "degenerate {what}: {} duplicate code vector pair(s), e.g. {a} and {b}",
                dups.len()
            );
            true
        } else {
            false
        }
    }

    /// Nearest code to `r` under squared Euclidean distance.
    pub fn nearest(&self, r: &[f64]) -> Result<(usize, &[f64])> {
        nearest_code(r, self)
    }
}

/// Squared Euclidean distance.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let t = x - y;
            t * t
        })
        .sum()
}

/// Index and squared distance of the nearest code; lowest index on ties.
#[inline]
pub(crate) fn nearest_index(r: &[f64], codes: &[f64], d: usize) -> (usize, f64) {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (k, c) in codes.chunks_exact(d).enumerate() {
        let dist = squared_distance(r, c);
        if dist < best_dist {
            best = k;
            best_dist = dist;
        }
    }
    (best, best_dist)
}

/// Exhaustive nearest-code lookup. Ties go to the lowest index.
pub fn nearest_code<'a>(r: &[f64], cb: &'a Codebook) -> Result<(usize, &'a [f64])> {
    if cb.k == 0 {
        return Err(Error::EmptyCodebook);
    }
    if r.len() != cb.d {
        return Err(Error::DimensionMismatch {
            expected: cb.d,
            got: r.len(),
        });
    }
    let (k, _) = nearest_index(r, &cb.vectors, cb.d);
    Ok((k, cb.vector(k)))
}
