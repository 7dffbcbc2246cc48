//! Lloyd's k-means with k-means++ seeding.
//!
//! Used directly as the per-level quantizer of RQ-KMeans and as the warm
//! start for each mixture fit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{nearest_index, squared_distance, Codebook, EmbeddingMatrix};
use crate::rng;

/// Guard for the relative-change denominator.
pub(crate) const REL_EPS: f64 = 1e-30;

/// Shared iteration settings for k-means and EM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Relative change of the monitored objective below which a level stops.
    pub tol: f64,
    pub seed: u64,
    pub reseed_empty: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 30,
            tol: 1e-6,
            seed: 0,
            reseed_empty: true,
        }
    }
}

impl FitConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "tol must be a positive finite number, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// One fitted k-means level.
#[derive(Debug, Clone, PartialEq)]
pub struct KmeansLevel {
    pub centroids: Codebook,
    /// Cluster sizes under the final assignment.
    pub counts: Vec<u64>,
    /// Sum of squared distances after each assignment step.
    pub inertia_trace: Vec<f64>,
    pub converged: bool,
    /// Number of centroids moved to recover empty clusters.
    pub reseeds: usize,
    pub degenerate: bool,
}

impl KmeansLevel {
    pub fn k(&self) -> usize {
        self.centroids.k()
    }

    pub fn iterations(&self) -> usize {
        self.inertia_trace.len()
    }

    /// Rebuilds a level from persisted centroids; traces are not persisted.
    pub fn from_parts(centroids: Codebook, counts: Vec<u64>) -> Self {
        Self {
            centroids,
            counts,
            inertia_trace: Vec::new(),
            converged: false,
            reseeds: 0,
            degenerate: false,
        }
    }
}

/// State handed to an observer after each assignment step.
pub(crate) struct IterationView<'a> {
    pub labels: &'a [usize],
    pub means: &'a [f64],
}

fn check_k(data: &EmbeddingMatrix, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > data.n() {
        return Err(Error::TooFewSamples { k, n: data.n() });
    }
    Ok(())
}

/// k-means++ seeding: the first center uniformly, each following one with
/// probability proportional to its squared distance to the nearest chosen
/// center. Each step draws [`local_trials`] candidates and keeps the best.
pub fn kmeanspp_init(data: &EmbeddingMatrix, k: usize, seed: u64) -> Result<Codebook> {
    check_k(data, k)?;
    let (n, d) = (data.n(), data.d());
    let mut rng = rng::seeded(seed);
    let mut centers = Vec::with_capacity(k * d);

    let first = rng::index(&mut rng, n);
    centers.extend_from_slice(data.row(first));
    let mut nearest: Vec<f64> = data
        .as_slice()
        .par_chunks_exact(d)
        .map(|x| squared_distance(x, data.row(first)))
        .collect();

    let trials = local_trials(k);
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        // Greedy variant: draw several candidates, keep the one that lowers
        // the total squared distance the most.
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let pick = if total > 0.0 {
                sample_weighted(&nearest, rng::uniform(&mut rng) * total)
            } else {
                rng::index(&mut rng, n)
            };
            let cand: Vec<f64> = data
                .as_slice()
                .par_chunks_exact(d)
                .zip(nearest.par_iter())
                .map(|(x, &b)| squared_distance(x, data.row(pick)).min(b))
                .collect();
            let potential: f64 = cand.iter().sum();
            if best.as_ref().is_none_or(|(p, _, _)| potential < *p) {
                best = Some((potential, pick, cand));
            }
        }
        let (_, pick, cand) = best.expect("at least one trial");
        nearest = cand;
        centers.extend_from_slice(data.row(pick));
    }
    Codebook::new(centers, k, d)
}

/// Candidates drawn per k-means++ step: `2 + floor(ln k)`.
pub fn local_trials(k: usize) -> usize {
    2 + (k as f64).ln().floor() as usize
}

/// First index whose running weight sum exceeds `target`. Zero-weight
/// entries are never returned while a positive weight exists.
fn sample_weighted(weights: &[f64], target: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if acc > target {
            return i;
        }
    }
    // Rounding can leave `target` at or past the final sum.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Assigns every row to its nearest centroid, returning labels and distances.
pub(crate) fn assign(data: &EmbeddingMatrix, centroids: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let d = data.d();
    data.as_slice()
        .par_chunks_exact(d)
        .map(|x| nearest_index(x, centroids, d))
        .unzip()
}

fn counts_of(labels: &[usize], k: usize) -> Vec<u64> {
    let mut counts = vec![0u64; k];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Moves each empty centroid onto the sample farthest from its own centroid
/// (drawn from clusters that can spare a member), then reassigns. Repeats
/// until no cluster is empty or no candidate sample remains.
fn reseed_empty(
    data: &EmbeddingMatrix,
    centroids: &mut [f64],
    labels: &mut Vec<usize>,
    dists: &mut Vec<f64>,
    k: usize,
) -> usize {
    let d = data.d();
    let mut moved = 0;
    for _ in 0..k {
        let mut counts = counts_of(labels, k);
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if empty.is_empty() {
            break;
        }
        let mut progressed = false;
        for e in empty {
            let mut best: Option<(usize, f64)> = None;
            for (i, &dist) in dists.iter().enumerate() {
                if dist > 0.0 && counts[labels[i]] >= 2 && best.is_none_or(|(_, b)| dist > b) {
                    best = Some((i, dist));
                }
            }
            let Some((i, _)) = best else { break };
            centroids[e * d..(e + 1) * d].copy_from_slice(data.row(i));
            counts[labels[i]] -= 1;
            counts[e] += 1;
            labels[i] = e;
            dists[i] = 0.0;
            moved += 1;
            progressed = true;
        }
        if !progressed {
            break;
        }
        let (l, dd) = assign(data, centroids);
        *labels = l;
        *dists = dd;
    }
    moved
}

/// Recomputes each centroid as the mean of its members. Clusters are summed
/// independently in row order, so the result does not depend on the number
/// of worker threads.
fn update_means(data: &EmbeddingMatrix, labels: &[usize], centroids: &mut [f64], k: usize) {
    let d = data.d();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    centroids
        .par_chunks_exact_mut(d)
        .zip(members.par_iter())
        .for_each(|(c, idx)| {
            if idx.is_empty() {
                return;
            }
            c.iter_mut().for_each(|v| *v = 0.0);
            for &i in idx {
                for (s, x) in c.iter_mut().zip(data.row(i)) {
                    *s += x;
                }
            }
            let m = idx.len() as f64;
            c.iter_mut().for_each(|v| *v /= m);
        });
}

pub fn kmeans_fit(data: &EmbeddingMatrix, k: usize, cfg: &FitConfig) -> Result<KmeansLevel> {
    kmeans_fit_observed(data, k, cfg, &mut |_| {})
}

pub(crate) fn kmeans_fit_observed(
    data: &EmbeddingMatrix,
    k: usize,
    cfg: &FitConfig,
    observer: &mut dyn FnMut(IterationView<'_>),
) -> Result<KmeansLevel> {
    cfg.validate()?;
    check_k(data, k)?;
    let init = kmeanspp_init(data, k, cfg.seed)?;
    let mut centroids = init.as_slice().to_vec();
    let mut trace: Vec<f64> = Vec::with_capacity(cfg.max_iters);
    let mut reseeds = 0;
    let mut converged = false;
    let mut labels;

    loop {
        let (l, mut dists) = assign(data, &centroids);
        labels = l;
        if cfg.reseed_empty {
            reseeds += reseed_empty(data, &mut centroids, &mut labels, &mut dists, k);
        }
        let inertia: f64 = dists.iter().sum();
        observer(IterationView {
            labels: &labels,
            means: &centroids,
        });
        if let Some(&prev) = trace.last() {
            let rel = (prev - inertia).abs() / f64::max(prev, REL_EPS);
            if rel < cfg.tol {
                converged = true;
            }
        }
        trace.push(inertia);
        if converged || trace.len() >= cfg.max_iters {
            break;
        }
        update_means(data, &labels, &mut centroids, k);
    }

    let centroids = Codebook::new(centroids, k, data.d())?;
    let degenerate = centroids.warn_if_degenerate("k-means codebook");
    Ok(KmeansLevel {
        counts: counts_of(&labels, k),
        centroids,
        inertia_trace: trace,
        converged,
        reseeds,
        degenerate,
    })
}
