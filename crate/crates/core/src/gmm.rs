//! Diagonal-covariance Gaussian mixtures fitted by EM on one residual level.
//!
//! Densities are evaluated in log space throughout: at a few hundred
//! dimensions the plain pdf underflows to zero for every component.

use log::{debug, warn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kmeans::{self, FitConfig, IterationView, REL_EPS};
use crate::quantizer::{Codebook, EmbeddingMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative variance floor, scaled by the per-dimension data variance.
pub const VARIANCE_FLOOR_REL: f64 = 1e-6;
/// Absolute variance floor.
pub const VARIANCE_FLOOR_ABS: f64 = 1e-12;
/// A component whose effective count drops below this fraction of N is starved.
pub const STARVATION_FRACTION: f64 = 1e-6;
/// Reseeds allowed per component within one fit.
pub const MAX_RESEEDS_PER_COMPONENT: usize = 3;

/// One fitted mixture level: `K` means, diagonal variances and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmLevel {
    means: Codebook,
    variances: Vec<f64>,
    weights: Vec<f64>,
    /// Total training log-likelihood per EM iteration (since the last reseed).
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub reseeds: usize,
    pub degenerate: bool,
    /// Iterations spent in the k-means warm start.
    pub init_iterations: usize,
    // ln pi_k - 1/2 sum_j ln(2 pi sigma_kj^2)
    log_norm: Vec<f64>,
    inv_var: Vec<f64>,
}

impl GmmLevel {
    /// Builds a level from raw parameters, checking every invariant.
    pub fn new(means: Codebook, variances: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let (k, d) = (means.k(), means.dim());
        if variances.len() != k * d {
            return Err(Error::DimensionMismatch {
                expected: k * d,
                got: variances.len(),
            });
        }
        if weights.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: weights.len(),
            });
        }
        if let Some(pos) = variances.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "variance of component {} dimension {} must be positive and finite",
                pos / d,
                pos % d
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("mixing weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mixing weights sum to {total}, expected 1"
            )));
        }
        let mut level = Self {
            means,
            variances,
            weights,
            loglik_trace: Vec::new(),
            converged: false,
            reseeds: 0,
            degenerate: false,
            init_iterations: 0,
            log_norm: Vec::new(),
            inv_var: Vec::new(),
        };
        level.refresh_cache();
        Ok(level)
    }

    fn refresh_cache(&mut self) {
        let d = self.dim();
        self.inv_var = self.variances.iter().map(|v| 1.0 / v).collect();
        self.log_norm = self
            .weights
            .iter()
            .zip(self.variances.chunks_exact(d))
            .map(|(w, var)| w.ln() - 0.5 * var.iter().map(|v| LN_2PI + v.ln()).sum::<f64>())
            .collect();
    }

    pub fn k(&self) -> usize {
        self.means.k()
    }

    pub fn dim(&self) -> usize {
        self.means.dim()
    }

    pub fn means(&self) -> &Codebook {
        &self.means
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        self.means.vector(k)
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.variances[k * d..(k + 1) * d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iterations(&self) -> usize {
        self.loglik_trace.len()
    }

    /// `ln pi_k + ln N(x | mu_k, sigma_k^2)` for every component.
    fn log_joint_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (k, o) in out.iter_mut().enumerate() {
            let mu = &self.means.as_slice()[k * d..(k + 1) * d];
            let iv = &self.inv_var[k * d..(k + 1) * d];
            let mut q = 0.0;
            for j in 0..d {
                let t = x[j] - mu[j];
                q += t * t * iv[j];
            }
            *o = self.log_norm[k] - 0.5 * q;
        }
    }

    /// Overwrites `buf` (log joints) with posteriors and returns `ln p(x)`.
    fn posterior_in_place(&self, x: &[f64], buf: &mut [f64]) -> Result<f64> {
        self.log_joint_into(x, buf);
        let lse = log_sum_exp(buf);
        if lse == f64::NEG_INFINITY || lse.is_nan() {
            return Err(Error::ZeroDensity);
        }
        buf.iter_mut().for_each(|v| *v = (*v - lse).exp());
        Ok(lse)
    }

    /// MAP component for `x`.
    pub fn assign(&self, x: &[f64]) -> Result<usize> {
        Ok(map_assign(&responsibilities(x, self)?))
    }
}

/// Numerically stable `ln sum exp(v)`; `-inf` for an all `-inf` input.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Posterior probabilities of each component for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub gamma: Vec<f64>,
}

/// `ln pi_k + ln N(x | mu_k, diag sigma_k^2)`.
pub fn log_density(x: &[f64], level: &GmmLevel, k: usize) -> Result<f64> {
    if k >= level.k() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: level.k(),
        });
    }
    if x.len() != level.dim() {
        return Err(Error::DimensionMismatch {
            expected: level.dim(),
            got: x.len(),
        });
    }
    let mut all = vec![0.0; level.k()];
    level.log_joint_into(x, &mut all);
    Ok(all[k])
}

pub fn responsibilities(x: &[f64], level: &GmmLevel) -> Result<Responsibilities> {
    if x.len() != level.dim() {
        return Err(Error::DimensionMismatch {
            expected: level.dim(),
            got: x.len(),
        });
    }
    let mut gamma = vec![0.0; level.k()];
    level.posterior_in_place(x, &mut gamma)?;
    Ok(Responsibilities { gamma })
}

/// Index of the largest posterior; ties go to the lowest index.
pub fn map_assign(gamma: &Responsibilities) -> usize {
    argmax(&gamma.gamma)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn em_fit(data: &EmbeddingMatrix, k: usize, cfg: &FitConfig) -> Result<GmmLevel> {
    em_fit_observed(data, k, cfg, &mut |_| {})
}

pub(crate) fn variance_floor(data: &EmbeddingMatrix) -> (Vec<f64>, Vec<f64>) {
    let global = data.column_variances();
    let floor = global
        .iter()
        .map(|v| f64::max(VARIANCE_FLOOR_REL * v, VARIANCE_FLOOR_ABS))
        .collect();
    (global, floor)
}

pub(crate) fn em_fit_observed(
    data: &EmbeddingMatrix,
    k: usize,
    cfg: &FitConfig,
    observer: &mut dyn FnMut(IterationView<'_>),
) -> Result<GmmLevel> {
    cfg.validate()?;
    let (n, d) = (data.n(), data.d());
    let km = kmeans::kmeans_fit(data, k, cfg)?;
    let (global_var, floor) = variance_floor(data);
    let degenerate_data = global_var.iter().all(|&v| v == 0.0);

    // Warm start from the k-means partition.
    let mut means = km.centroids.as_slice().to_vec();
    let (labels, _) = kmeans::assign(data, &means);
    let mut variances = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        let mu = &means[l * d..(l + 1) * d];
        for (j, x) in data.row(i).iter().enumerate() {
            let t = x - mu[j];
            variances[l * d + j] += t * t;
        }
    }
    for c in 0..k {
        for j in 0..d {
            let v = &mut variances[c * d + j];
            *v = if counts[c] > 0 {
                *v / counts[c] as f64
            } else {
                global_var[j]
            };
            *v = v.max(floor[j]);
        }
    }
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let mut level = GmmLevel::new(Codebook::new(means.clone(), k, d)?, variances, weights)?;
    level.init_iterations = km.iterations();

    let mut gamma = vec![0.0; n * k];
    let mut loglik = vec![0.0; n];
    let mut reseed_budget = vec![0usize; k];
    let mut trace: Vec<f64> = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;

    loop {
        // E-step
        gamma
            .par_chunks_exact_mut(k)
            .zip(loglik.par_iter_mut())
            .zip(data.as_slice().par_chunks_exact(d))
            .try_for_each(|((g, ll), x)| -> Result<()> {
                *ll = level.posterior_in_place(x, g)?;
                Ok(())
            })?;
        let total: f64 = loglik.iter().sum();
        let effective: Vec<f64> = (0..k)
            .into_par_iter()
            .map(|c| gamma.iter().skip(c).step_by(k).sum())
            .collect();

        let starved: Vec<usize> = (0..k)
            .filter(|&c| effective[c] < STARVATION_FRACTION * n as f64)
            .collect();
        if cfg.reseed_empty && !degenerate_data && !starved.is_empty() {
            reseed_starved(&mut level, &starved, &mut reseed_budget, data, &loglik, &global_var, &floor)?;
            trace.clear();
            continue;
        }

        let labels: Vec<usize> = gamma.chunks_exact(k).map(argmax).collect();
        observer(IterationView {
            labels: &labels,
            means: level.means.as_slice(),
        });
        if let Some(&prev) = trace.last() {
            let rel = (total - prev).abs() / f64::max(prev.abs(), REL_EPS);
            if rel < cfg.tol {
                converged = true;
            }
        }
        trace.push(total);
        debug!("em iteration {}: loglik {total}", trace.len());
        if converged || trace.len() >= cfg.max_iters {
            break;
        }

        // M-step
        let params: Vec<(Vec<f64>, Vec<f64>)> = (0..k)
            .into_par_iter()
            .map(|c| {
                let nk = effective[c];
                if nk <= 0.0 {
                    return (level.mean(c).to_vec(), level.variance(c).to_vec());
                }
                let mut mu = vec![0.0; d];
                for (i, x) in data.rows().enumerate() {
                    let g = gamma[i * k + c];
                    for (m, v) in mu.iter_mut().zip(x) {
                        *m += g * v;
                    }
                }
                mu.iter_mut().for_each(|m| *m /= nk);
                let mut var = vec![0.0; d];
                for (i, x) in data.rows().enumerate() {
                    let g = gamma[i * k + c];
                    for j in 0..d {
                        let t = x[j] - mu[j];
                        var[j] += g * t * t;
                    }
                }
                for (v, f) in var.iter_mut().zip(&floor) {
                    *v = (*v / nk).max(*f);
                }
                (mu, var)
            })
            .collect();
        let total_eff: f64 = effective.iter().sum();
        means.clear();
        let mut variances = Vec::with_capacity(k * d);
        for (mu, var) in params {
            means.extend(mu);
            variances.extend(var);
        }
        let weights = effective.iter().map(|e| e / total_eff).collect();
        level = GmmLevel {
            means: Codebook::new(means.clone(), k, d)?,
            variances,
            weights,
            ..level
        };
        level.refresh_cache();
    }

    level.loglik_trace = trace;
    level.converged = converged;
    level.reseeds = reseed_budget.iter().sum();
    level.degenerate = level.means.warn_if_degenerate("mixture means");
    if degenerate_data {
        warn!("all samples are identical; the mixture has a single effective component");
        level.degenerate = true;
    }
    Ok(level)
}

/// Moves starved components onto the worst-explained samples with the
/// global variance, then renormalizes the weights.
fn reseed_starved(
    level: &mut GmmLevel,
    starved: &[usize],
    budget: &mut [usize],
    data: &EmbeddingMatrix,
    loglik: &[f64],
    global_var: &[f64],
    floor: &[f64],
) -> Result<()> {
    let (k, d) = (level.k(), level.dim());
    let mut means = level.means.as_slice().to_vec();
    let mut taken: Vec<usize> = Vec::new();
    for &c in starved {
        if budget[c] >= MAX_RESEEDS_PER_COMPONENT {
            return Err(Error::ComponentStarved { component: c });
        }
        budget[c] += 1;
        let worst = (0..data.n())
            .filter(|i| !taken.contains(i))
            .min_by(|&a, &b| loglik[a].total_cmp(&loglik[b]).then(a.cmp(&b)))
            .ok_or(Error::ComponentStarved { component: c })?;
        taken.push(worst);
        debug!("reseeding starved component {c} at sample {worst}");
        means[c * d..(c + 1) * d].copy_from_slice(data.row(worst));
        for j in 0..d {
            level.variances[c * d + j] = global_var[j].max(floor[j]);
        }
        level.weights[c] = 1.0 / k as f64;
    }
    let total: f64 = level.weights.iter().sum();
    level.weights.iter_mut().for_each(|w| *w /= total);
    level.means = Codebook::new(means, k, d)?;
    level.refresh_cache();
    Ok(())
}
