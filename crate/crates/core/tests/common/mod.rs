#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rqgmm::rq::{FitReport, LevelReport};
use rqgmm::{Codebook, GmmLevel, KmeansLevel, Level, Method, RqModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(r: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| r.random_range(lo..hi)).collect()
}

fn report(levels: usize, k: usize) -> FitReport {
    FitReport {
        seed: 0,
        max_iters: 30,
        tol: 1e-6,
        reseed_empty: true,
        n_samples: k,
        levels: (0..levels)
            .map(|_| LevelReport {
                iterations: 1,
                init_iterations: 0,
                converged: true,
                reseeds: 0,
                degenerate: false,
                rmse: 0.0,
                utilization: 1.0,
                histogram: vec![1; k],
                wall_time: Default::default(),
            })
            .collect(),
    }
}

/// A model with random parameters; no training involved.
pub fn random_model(r: &mut ChaCha8Rng, method: Method, levels: usize, k: usize, d: usize) -> RqModel {
    let levels = if method == Method::FlatVq { 1 } else { levels };
    let built = (0..levels)
        .map(|l| {
            let scale = 4.0 / (1 + l) as f64;
            let means = Codebook::new(uniform_vec(r, k * d, -scale, scale), k, d).unwrap();
            match method {
                Method::RqGmm => {
                    let vars = uniform_vec(r, k * d, 0.05, 2.0);
                    let raw = uniform_vec(r, k, 0.1, 1.0);
                    let total: f64 = raw.iter().sum();
                    let weights = raw.iter().map(|w| w / total).collect();
                    Level::Gmm(GmmLevel::new(means, vars, weights).unwrap())
                }
                _ => Level::Kmeans(KmeansLevel::from_parts(means, vec![1; k])),
            }
        })
        .collect();
    RqModel::from_levels(method, built, report(levels, k)).unwrap()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Straightforward diagonal-Gaussian log joint `ln pi_k + ln N(x | mu_k, var_k)`.
pub fn log_joint(x: &[f64], mean: &[f64], var: &[f64], weight: f64) -> f64 {
    let mut s = weight.ln();
    for j in 0..x.len() {
        s += -0.5 * (2.0 * std::f64::consts::PI * var[j]).ln() - (x[j] - mean[j]).powi(2) / (2.0 * var[j]);
    }
    s
}

/// Step-by-step reference encoder: exhaustive scan per level, first index
/// wins ties.
pub fn reference_encode(x: &[f64], model: &RqModel) -> Vec<u32> {
    let d = model.dim();
    let mut r = x.to_vec();
    let mut codes = Vec::new();
    for level in model.levels() {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for c in 0..level.k() {
            let score = match level {
                Level::Kmeans(km) => -sq_dist(&r, km.centroids.vector(c)),
                Level::Gmm(g) => log_joint(&r, g.mean(c), g.variance(c), g.weights()[c]),
            };
            if score > best_score {
                best_score = score;
                best = c;
            }
        }
        let code = level.code(best);
        for j in 0..d {
            r[j] -= code[j];
        }
        codes.push(best as u32);
    }
    codes
}
