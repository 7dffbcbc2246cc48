//! The multi-level residual cascade.
//!
//! Levels are fitted one after another. After level `l` is fitted, every
//! training residual is updated by subtracting the single code vector the
//! level selects for it (MAP for mixtures, nearest centroid for k-means),
//! which is exactly what inference does.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{self, GmmLevel};
use crate::kmeans::{self, FitConfig, IterationView, KmeansLevel};
use crate::quantizer::{nearest_index, squared_distance, EmbeddingMatrix};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "rq-gmm")]
    RqGmm,
    #[serde(rename = "rq-kmeans")]
    RqKmeans,
    /// A single k-means codebook on the raw embeddings.
    #[serde(rename = "flat-vq")]
    FlatVq,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::RqGmm, Method::RqKmeans, Method::FlatVq];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::RqGmm => "rq-gmm",
            Method::RqKmeans => "rq-kmeans",
            Method::FlatVq => "flat-vq",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "rq-gmm" | "gmm" => Ok(Method::RqGmm),
            "rq-kmeans" | "kmeans" => Ok(Method::RqKmeans),
            "flat-vq" | "vq" => Ok(Method::FlatVq),
            _ => Err(Error::InvalidArgument(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Level {
    Gmm(GmmLevel),
    Kmeans(KmeansLevel),
}

impl Level {
    pub fn k(&self) -> usize {
        match self {
            Level::Gmm(g) => g.k(),
            Level::Kmeans(km) => km.k(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Level::Gmm(g) => g.dim(),
            Level::Kmeans(km) => km.centroids.dim(),
        }
    }

    /// The code vector reconstructed for index `k`.
    pub fn code(&self, k: usize) -> &[f64] {
        match self {
            Level::Gmm(g) => g.mean(k),
            Level::Kmeans(km) => km.centroids.vector(k),
        }
    }

    /// Selects a code for one residual: MAP posterior or nearest centroid.
    pub fn select(&self, r: &[f64]) -> Result<usize> {
        match self {
            Level::Gmm(g) => g.assign(r),
            Level::Kmeans(km) => {
                Ok(nearest_index(r, km.centroids.as_slice(), km.centroids.dim()).0)
            }
        }
    }

    pub fn iterations(&self) -> usize {
        match self {
            Level::Gmm(g) => g.iterations(),
            Level::Kmeans(km) => km.iterations(),
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            Level::Gmm(g) => g.converged,
            Level::Kmeans(km) => km.converged,
        }
    }
}

/// Per-level snapshot taken on the training data while fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub iterations: usize,
    /// Iterations spent in the k-means warm start (mixture levels only).
    pub init_iterations: usize,
    pub converged: bool,
    pub reseeds: usize,
    pub degenerate: bool,
    /// Cumulative-reconstruction RMSE after this level.
    pub rmse: f64,
    pub utilization: f64,
    pub histogram: Vec<u64>,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub reseed_empty: bool,
    pub n_samples: usize,
    pub levels: Vec<LevelReport>,
}

/// A fitted residual quantizer with `L` homogeneous levels.
#[derive(Debug, Clone, PartialEq)]
pub struct RqModel {
    method: Method,
    dim: usize,
    k: usize,
    levels: Vec<Level>,
    pub fit_report: FitReport,
}

impl RqModel {
    /// Assembles a model from levels, checking that they agree in shape and
    /// kind with `method`.
    pub fn from_levels(method: Method, levels: Vec<Level>, fit_report: FitReport) -> Result<Self> {
        let first = levels
            .first()
            .ok_or(Error::InvalidArgument("a model needs at least one level".into()))?;
        let (dim, k) = (first.dim(), first.k());
        if method == Method::FlatVq && levels.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "flat-vq models have exactly one level, got {}",
                levels.len()
            )));
        }
        for (l, level) in levels.iter().enumerate() {
            if level.dim() != dim || level.k() != k {
                return Err(Error::InvalidArgument(format!(
                    "level {l} has shape K={} D={}, expected K={k} D={dim}",
                    level.k(),
                    level.dim()
                )));
            }
            let kind_ok = matches!(
                (method, level),
                (Method::RqGmm, Level::Gmm(_)) | (Method::RqKmeans | Method::FlatVq, Level::Kmeans(_))
            );
            if !kind_ok {
                return Err(Error::InvalidArgument(format!(
                    "level {l} does not match method {method}"
                )));
            }
        }
        Ok(Self {
            method,
            dim,
            k,
            levels,
            fit_report,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }
}

/// Discrete code sequence `[k_1, ..., k_L]`, zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SemanticId(pub Vec<u32>);

impl SemanticId {
    pub fn codes(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub rmse: f64,
    pub utilization_per_level: Vec<f64>,
    pub code_histogram_per_level: Vec<Vec<u64>>,
    pub n_samples: usize,
}

fn check_fit_args(data: &EmbeddingMatrix, method: Method, levels: usize, k: usize, cfg: &FitConfig) -> Result<()> {
    cfg.validate()?;
    if levels == 0 {
        return Err(Error::InvalidArgument("at least one level is required".into()));
    }
    if method == Method::FlatVq && levels != 1 {
        return Err(Error::InvalidArgument("flat-vq uses exactly one level".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > data.n() {
        return Err(Error::TooFewSamples { k, n: data.n() });
    }
    Ok(())
}

/// Per-level, per-iteration cumulative-reconstruction RMSE on training data.
pub type ConvergenceTrace = Vec<Vec<f64>>;

pub fn fit(data: &EmbeddingMatrix, method: Method, levels: usize, k: usize, cfg: &FitConfig) -> Result<RqModel> {
    fit_traced(data, method, levels, k, cfg).map(|(m, _)| m)
}

/// Records the RMSE of the running reconstruction after every fitting
/// iteration of every level.
pub fn convergence_trace(
    data: &EmbeddingMatrix,
    method: Method,
    levels: usize,
    k: usize,
    cfg: &FitConfig,
) -> Result<ConvergenceTrace> {
    fit_traced(data, method, levels, k, cfg).map(|(_, t)| t)
}

pub fn fit_traced(
    data: &EmbeddingMatrix,
    method: Method,
    levels: usize,
    k: usize,
    cfg: &FitConfig,
) -> Result<(RqModel, ConvergenceTrace)> {
    check_fit_args(data, method, levels, k, cfg)?;
    let (n, d) = (data.n(), data.d());
    let mut residual = data.clone();
    let mut fitted = Vec::with_capacity(levels);
    let mut reports = Vec::with_capacity(levels);
    let mut traces = Vec::with_capacity(levels);

    for l in 0..levels {
        let level_cfg = FitConfig {
            seed: derive_seed(cfg.seed, l as u64),
            ..*cfg
        };
        let started = Instant::now();
        let mut trace = Vec::new();
        let mut observe = |view: IterationView<'_>| {
            let sse: f64 = view
                .labels
                .par_iter()
                .zip(residual.as_slice().par_chunks_exact(d))
                .map(|(&c, r)| squared_distance(r, &view.means[c * d..(c + 1) * d]))
                .collect::<Vec<f64>>()
                .iter()
                .sum();
            trace.push((sse / n as f64).sqrt());
        };
        let level = match method {
            Method::RqGmm => gmm::em_fit_observed(&residual, k, &level_cfg, &mut observe).map(Level::Gmm),
            Method::RqKmeans | Method::FlatVq => {
                kmeans::kmeans_fit_observed(&residual, k, &level_cfg, &mut observe).map(Level::Kmeans)
            }
        }
        .map_err(|e| Error::LevelFit {
            level: l + 1,
            source: Box::new(e),
        })?;
        let wall_time = started.elapsed();

        // Hard residual propagation with the same selection rule as encode.
        let labels: Vec<usize> = residual
            .as_slice()
            .par_chunks_exact(d)
            .map(|r| level.select(r))
            .collect::<Result<_>>()
            .map_err(|e| Error::LevelFit {
                level: l + 1,
                source: Box::new(e),
            })?;
        let mut next = residual.clone().into_vec();
        next.par_chunks_exact_mut(d)
            .zip(labels.par_iter())
            .for_each(|(r, &c)| {
                for (v, m) in r.iter_mut().zip(level.code(c)) {
                    *v -= m;
                }
            });
        residual = EmbeddingMatrix::new(next, n, d)?;

        let mut histogram = vec![0u64; k];
        labels.iter().for_each(|&c| histogram[c] += 1);
        let sse: f64 = residual.rows().map(|r| r.iter().map(|v| v * v).sum::<f64>()).sum();
        let report = LevelReport {
            iterations: level.iterations(),
            init_iterations: match &level {
                Level::Gmm(g) => g.init_iterations,
                Level::Kmeans(_) => 0,
            },
            converged: level.converged(),
            reseeds: match &level {
                Level::Gmm(g) => g.reseeds,
                Level::Kmeans(km) => km.reseeds,
            },
            degenerate: match &level {
                Level::Gmm(g) => g.degenerate,
                Level::Kmeans(km) => km.degenerate,
            },
            rmse: (sse / n as f64).sqrt(),
            utilization: histogram.iter().filter(|&&c| c > 0).count() as f64 / k as f64,
            histogram,
            wall_time,
        };
        info!(
            "level {}: {} iterations, rmse {:.6}, utilization {:.3}, {:?}",
            l + 1,
            report.iterations,
            report.rmse,
            report.utilization,
            wall_time
        );
        fitted.push(level);
        reports.push(report);
        traces.push(trace);
    }

    let report = FitReport {
        seed: cfg.seed,
        max_iters: cfg.max_iters,
        tol: cfg.tol,
        reseed_empty: cfg.reseed_empty,
        n_samples: n,
        levels: reports,
    };
    Ok((RqModel::from_levels(method, fitted, report)?, traces))
}

pub fn encode(x: &[f64], model: &RqModel) -> Result<SemanticId> {
    if x.len() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: x.len(),
        });
    }
    let mut r = x.to_vec();
    let mut codes = Vec::with_capacity(model.levels.len());
    for level in &model.levels {
        let c = level.select(&r)?;
        for (v, m) in r.iter_mut().zip(level.code(c)) {
            *v -= m;
        }
        codes.push(c as u32);
    }
    Ok(SemanticId(codes))
}

/// Encodes every row, in parallel.
pub fn encode_batch(data: &EmbeddingMatrix, model: &RqModel) -> Result<Vec<SemanticId>> {
    if data.d() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: data.d(),
        });
    }
    data.as_slice()
        .par_chunks_exact(data.d())
        .map(|x| encode(x, model))
        .collect()
}

/// Encodes a row-major buffer of `out.len() / L` rows straight into `out`
/// (`L` codes per row) without building an [`EmbeddingMatrix`]. `f32`
/// input is widened to `f64` one row at a time.
pub fn encode_rows_into<T>(data: &[T], model: &RqModel, out: &mut [u32]) -> Result<()>
where
    T: Copy + Into<f64> + Sync,
{
    let (d, levels) = (model.dim, model.levels.len());
    if data.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: data.len() % d,
        });
    }
    let n = data.len() / d;
    if out.len() != n * levels {
        return Err(Error::DimensionMismatch {
            expected: n * levels,
            got: out.len(),
        });
    }
    data.par_chunks_exact(d)
        .zip(out.par_chunks_exact_mut(levels))
        .enumerate()
        .try_for_each(|(i, (row, codes))| {
            let x: Vec<f64> = row.iter().map(|&v| v.into()).collect();
            if let Some(col) = x.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: i, col });
            }
            codes.copy_from_slice(encode(&x, model)?.codes());
            Ok(())
        })
}

/// Sum of the selected per-level code vectors.
pub fn reconstruct(id: &SemanticId, model: &RqModel) -> Result<Vec<f64>> {
    if id.len() != model.levels.len() {
        return Err(Error::DimensionMismatch {
            expected: model.levels.len(),
            got: id.len(),
        });
    }
    let mut out = vec![0.0; model.dim];
    for (level, &c) in model.levels.iter().zip(id.codes()) {
        let c = c as usize;
        if c >= model.k {
            return Err(Error::IndexOutOfRange {
                index: c,
                len: model.k,
            });
        }
        for (o, m) in out.iter_mut().zip(level.code(c)) {
            *o += m;
        }
    }
    Ok(out)
}

pub fn evaluate(data: &EmbeddingMatrix, model: &RqModel) -> Result<QualityReport> {
    let ids = encode_batch(data, model)?;
    let errors: Vec<f64> = ids
        .par_iter()
        .zip(data.as_slice().par_chunks_exact(data.d()))
        .map(|(id, x)| reconstruct(id, model).map(|z| squared_distance(x, &z)))
        .collect::<Result<_>>()?;
    let sse: f64 = errors.iter().sum();
    let (levels, k) = (model.num_levels(), model.k);
    let mut hist = vec![vec![0u64; k]; levels];
    for id in &ids {
        for (h, &c) in hist.iter_mut().zip(id.codes()) {
            h[c as usize] += 1;
        }
    }
    Ok(QualityReport {
        rmse: (sse / data.n() as f64).sqrt(),
        utilization_per_level: hist
            .iter()
            .map(|h| h.iter().filter(|&&c| c > 0).count() as f64 / k as f64)
            .collect(),
        code_histogram_per_level: hist,
        n_samples: data.n(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::Codebook;
    use crate::rng::{seeded, standard_normal};

    fn random_data(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut r = seeded(seed);
        let v = (0..n * d).map(|_| standard_normal(&mut r)).collect();
        EmbeddingMatrix::new(v, n, d).unwrap()
    }

    fn constructed_gmm_model() -> RqModel {
        let x = [0.5, -1.0, 2.0];
        let mut l1 = vec![[9.0, 9.0, 9.0]; 5];
        l1[3] = x;
        let mut l2 = vec![[3.0, 3.0, -3.0]; 5];
        l2[0] = [0.0; 3];
        l2[2] = [1.0, 0.0, 0.0];
        let mk = |rows: Vec<[f64; 3]>| {
            Level::Gmm(GmmLevel::new(Codebook::from_rows(&rows).unwrap(), vec![1.0; 15], vec![0.2; 5]).unwrap())
        };
        RqModel::from_levels(Method::RqGmm, vec![mk(l1), mk(l2)], empty_report()).unwrap()
    }

    fn empty_report() -> FitReport {
        FitReport {
            seed: 0,
            max_iters: 30,
            tol: 1e-6,
            reseed_empty: true,
            n_samples: 0,
            levels: vec![],
        }
    }

    #[test]
    fn exact_mean_hit_then_zero_residual() {
        let model = constructed_gmm_model();
        let x = [0.5, -1.0, 2.0];
        let id = encode(&x, &model).unwrap();
        assert_eq!(id, SemanticId(vec![3, 0]));
        assert_eq!(reconstruct(&id, &model).unwrap(), x.to_vec());
        assert_eq!(encode(&x, &model).unwrap(), id);
    }

    #[test]
    fn encode_rejects_wrong_dimension() {
        let model = constructed_gmm_model();
        assert!(matches!(encode(&[1.0], &model), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn reconstruct_rejects_out_of_range() {
        let model = constructed_gmm_model();
        assert!(matches!(
            reconstruct(&SemanticId(vec![5, 0]), &model),
            Err(Error::IndexOutOfRange { index: 5, len: 5 })
        ));
        assert!(reconstruct(&SemanticId(vec![1]), &model).is_err());
    }

    #[test]
    fn perfect_codebook() {
        let data = random_data(12, 4, 1);
        for method in [Method::RqKmeans, Method::RqGmm, Method::FlatVq] {
            let model = fit(&data, method, 1, 12, &FitConfig::default()).unwrap();
            let q = evaluate(&data, &model).unwrap();
            assert_eq!(q.rmse, 0.0, "{method}");
            assert_eq!(q.utilization_per_level, vec![1.0]);
        }
    }

    #[test]
    fn zero_residual_second_level() {
        let data = random_data(10, 3, 2);
        for method in [Method::RqKmeans, Method::RqGmm] {
            let model = fit(&data, method, 2, 10, &FitConfig::default()).unwrap();
            let l2 = &model.levels()[1];
            for c in 0..10 {
                assert!(l2.code(c).iter().all(|v| *v == 0.0), "{method}");
            }
            assert_eq!(evaluate(&data, &model).unwrap().rmse, 0.0);
        }
    }

    #[test]
    fn identical_data_uses_one_code() {
        let data = EmbeddingMatrix::from_rows(&vec![[1.0, 1.0]; 20]).unwrap();
        let model = fit(&data, Method::RqKmeans, 1, 4, &FitConfig::default()).unwrap();
        let q = evaluate(&data, &model).unwrap();
        assert_eq!(q.utilization_per_level, vec![0.25]);
        assert_eq!(q.code_histogram_per_level[0], vec![20, 0, 0, 0]);
    }

    #[test]
    fn flat_vq_is_single_level() {
        let data = random_data(50, 2, 3);
        assert!(fit(&data, Method::FlatVq, 2, 4, &FitConfig::default()).is_err());
        let m = fit(&data, Method::FlatVq, 1, 4, &FitConfig::default()).unwrap();
        assert_eq!(m.num_levels(), 1);
    }

    #[test]
    fn fit_errors_name_the_level() {
        let data = random_data(5, 2, 3);
        assert!(matches!(fit(&data, Method::RqGmm, 2, 6, &FitConfig::default()), Err(Error::TooFewSamples { .. })));
        assert!(fit(&data, Method::RqGmm, 0, 2, &FitConfig::default()).is_err());
    }

    #[test]
    fn trace_ends_at_final_rmse() {
        let data = random_data(400, 6, 4);
        for method in [Method::RqGmm, Method::RqKmeans] {
            let cfg = FitConfig::with_seed(9);
            let (model, trace) = fit_traced(&data, method, 2, 8, &cfg).unwrap();
            let q = evaluate(&data, &model).unwrap();
            assert_eq!(trace.len(), 2);
            for t in &trace {
                assert!(!t.is_empty() && t.len() <= cfg.max_iters);
            }
            let last = *trace[1].last().unwrap();
            assert!((last - q.rmse).abs() <= 1e-12 * q.rmse.max(1.0), "{method}: {last} vs {}", q.rmse);
            assert!((model.fit_report.levels[1].rmse - q.rmse).abs() <= 1e-12 * q.rmse.max(1.0));
        }
    }

    #[test]
    fn histograms_sum_to_n() {
        let data = random_data(300, 5, 8);
        let model = fit(&data, Method::RqGmm, 3, 6, &FitConfig::default()).unwrap();
        let q = evaluate(&data, &model).unwrap();
        for h in &q.code_histogram_per_level {
            assert_eq!(h.iter().sum::<u64>(), 300);
        }
        assert_eq!(q.utilization_per_level.len(), 3);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("nope".parse::<Method>().is_err());
    }
}
