//! Synthetic embeddings with a known two-level structure.
//!
//! Each sample is `coarse_center[a] + fine_offset[b] + noise`, with `a` and
//! `b` drawn uniformly. In the heteroscedastic variant every fine cluster
//! gets its own per-dimension noise scale, log-uniform in
//! `[noise_sigma, 4 * noise_sigma]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::EmbeddingMatrix;
use crate::rng::{self, DetRng};

/// Largest ratio between per-dimension noise scales.
pub const HETERO_RATIO: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub coarse_k: usize,
    pub fine_k: usize,
    pub coarse_scale: f64,
    pub fine_scale: f64,
    pub noise_sigma: f64,
    pub heteroscedastic: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// The acceptance suite: 5000 x 16, 8 coarse and 8 fine clusters,
    /// heteroscedastic fine clusters.
    fn default() -> Self {
        Self {
            n: 5000,
            d: 16,
            coarse_k: 8,
            fine_k: 8,
            coarse_scale: 4.0,
            fine_scale: 1.0,
            noise_sigma: 0.05,
            heteroscedastic: true,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.coarse_k == 0 || self.fine_k == 0 {
            return Err(Error::InvalidArgument("synthetic counts must all be at least 1".into()));
        }
        for (name, v) in [
            ("coarse_scale", self.coarse_scale),
            ("fine_scale", self.fine_scale),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub coarse_labels: Vec<usize>,
    pub fine_labels: Vec<usize>,
    /// `coarse_k` rows of length `d`.
    pub coarse_centers: Vec<Vec<f64>>,
    /// `fine_k` rows of length `d`.
    pub fine_offsets: Vec<Vec<f64>>,
    /// Per fine cluster, per-dimension noise standard deviation.
    pub noise_sigmas: Vec<Vec<f64>>,
}

fn gaussian_rows(rng: &mut DetRng, rows: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..d).map(|_| scale * rng::standard_normal(rng)).collect())
        .collect()
}

pub fn generate(spec: &SynthSpec) -> Result<(EmbeddingMatrix, GroundTruth)> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let d = spec.d;
    let coarse_centers = gaussian_rows(&mut rng, spec.coarse_k, d, spec.coarse_scale);
    let fine_offsets = gaussian_rows(&mut rng, spec.fine_k, d, spec.fine_scale);
    let noise_sigmas: Vec<Vec<f64>> = (0..spec.fine_k)
        .map(|_| {
            (0..d)
                .map(|_| {
                    if spec.heteroscedastic {
                        spec.noise_sigma * HETERO_RATIO.powf(rng::uniform(&mut rng))
                    } else {
                        spec.noise_sigma
                    }
                })
                .collect()
        })
        .collect();

    let mut data = Vec::with_capacity(spec.n * d);
    let mut coarse_labels = Vec::with_capacity(spec.n);
    let mut fine_labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let a = rng::index(&mut rng, spec.coarse_k);
        let b = rng::index(&mut rng, spec.fine_k);
        for j in 0..d {
            let noise = noise_sigmas[b][j] * rng::standard_normal(&mut rng);
            data.push(coarse_centers[a][j] + fine_offsets[b][j] + noise);
        }
        coarse_labels.push(a);
        fine_labels.push(b);
    }
    let matrix = EmbeddingMatrix::new(data, spec.n, d)?;
    Ok((
        matrix,
        GroundTruth {
            coarse_labels,
            fine_labels,
            coarse_centers,
            fine_offsets,
            noise_sigmas,
        },
    ))
}

/// Samples from a diagonal Gaussian mixture with the given parameters.
/// Returns the matrix and the component of each sample.
pub fn sample_mixture(
    means: &[Vec<f64>],
    variances: &[Vec<f64>],
    weights: &[f64],
    n: usize,
    seed: u64,
) -> Result<(EmbeddingMatrix, Vec<usize>)> {
    if means.is_empty() || means.len() != variances.len() || means.len() != weights.len() {
        return Err(Error::InvalidArgument("mixture parameter lengths disagree".into()));
    }
    let d = means[0].len();
    let total: f64 = weights.iter().sum();
    let mut rng = rng::seeded(seed);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng::uniform(&mut rng) * total;
        let mut acc = 0.0;
        let mut c = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                c = i;
                break;
            }
        }
        for j in 0..d {
            data.push(means[c][j] + variances[c][j].sqrt() * rng::standard_normal(&mut rng));
        }
        labels.push(c);
    }
    Ok((EmbeddingMatrix::new(data, n, d)?, labels))
}
