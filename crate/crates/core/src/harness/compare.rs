//! Multi-seed method comparison on synthetic data.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::synth::{generate, SynthSpec};
use crate::kmeans::FitConfig;
use crate::rq::{evaluate, fit, Method, QualityReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok {
        quality: QualityReport,
        iterations_per_level: Vec<usize>,
        wall_ms: f64,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    pub seed: u64,
    pub outcome: CellOutcome,
}

impl Cell {
    pub fn quality(&self) -> Option<&QualityReport> {
        match &self.outcome {
            CellOutcome::Ok { quality, .. } => Some(quality),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub completed: usize,
    pub failed: usize,
    pub median_rmse: Option<f64>,
    pub median_utilization_per_level: Vec<f64>,
    /// Seeds on which this method had the lowest RMSE (ties count for all).
    pub rmse_wins: usize,
    /// Seeds on which this method had the highest mean utilization.
    pub utilization_wins: usize,
    pub median_iterations_per_level: Vec<f64>,
    pub median_wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub spec: SynthSpec,
    pub levels: usize,
    pub k: usize,
    pub config: FitConfig,
    pub seeds: Vec<u64>,
    pub cells: Vec<Cell>,
    pub summaries: Vec<MethodSummary>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Levels used for a method: flat VQ always has one.
pub fn levels_for(method: Method, levels: usize) -> usize {
    if method == Method::FlatVq {
        1
    } else {
        levels
    }
}

/// Runs fit + evaluate for every (method, seed) pair. The synthetic data
/// for seed `s` is `spec.with_seed(s)` and the fit uses seed `s`. Failed
/// fits are recorded in their cell and the run continues.
pub fn compare(
    spec: &SynthSpec,
    methods: &[Method],
    levels: usize,
    k: usize,
    seeds: &[u64],
    cfg: &FitConfig,
) -> Result<ComparisonReport> {
    spec.validate()?;
    let mut cells = Vec::with_capacity(methods.len() * seeds.len());
    for &seed in seeds {
        let (data, _) = generate(&spec.clone().with_seed(seed))?;
        let cell_cfg = FitConfig { seed, ..*cfg };
        for &method in methods {
            let started = Instant::now();
            let outcome = fit(&data, method, levels_for(method, levels), k, &cell_cfg)
                .and_then(|model| {
                    let quality = evaluate(&data, &model)?;
                    Ok(CellOutcome::Ok {
                        iterations_per_level: model.fit_report.levels.iter().map(|l| l.iterations).collect(),
                        quality,
                        wall_ms: started.elapsed().as_secs_f64() * 1e3,
                    })
                })
                .unwrap_or_else(|e| CellOutcome::Failed { error: e.to_string() });
            cells.push(Cell { method, seed, outcome });
        }
    }
    let summaries = summarize(methods, seeds, &cells);
    Ok(ComparisonReport {
        spec: spec.clone(),
        levels,
        k,
        config: *cfg,
        seeds: seeds.to_vec(),
        cells,
        summaries,
    })
}

fn summarize(methods: &[Method], seeds: &[u64], cells: &[Cell]) -> Vec<MethodSummary> {
    let mean_util = |q: &QualityReport| {
        q.utilization_per_level.iter().sum::<f64>() / q.utilization_per_level.len() as f64
    };
    methods
        .iter()
        .map(|&method| {
            let mine: Vec<&Cell> = cells.iter().filter(|c| c.method == method).collect();
            let ok: Vec<&Cell> = mine.iter().copied().filter(|c| c.quality().is_some()).collect();
            let levels = ok
                .first()
                .and_then(|c| c.quality())
                .map_or(0, |q| q.utilization_per_level.len());
            let mut rmse_wins = 0;
            let mut utilization_wins = 0;
            for &seed in seeds {
                let row: Vec<&QualityReport> = cells
                    .iter()
                    .filter(|c| c.seed == seed)
                    .filter_map(Cell::quality)
                    .collect();
                let Some(q) = cells
                    .iter()
                    .find(|c| c.seed == seed && c.method == method)
                    .and_then(Cell::quality)
                else {
                    continue;
                };
                if row.iter().all(|o| q.rmse <= o.rmse) {
                    rmse_wins += 1;
                }
                if row.iter().all(|o| mean_util(q) >= mean_util(o)) {
                    utilization_wins += 1;
                }
            }
            MethodSummary {
                method,
                completed: ok.len(),
                failed: mine.len() - ok.len(),
                median_rmse: median(ok.iter().filter_map(|c| c.quality()).map(|q| q.rmse).collect()),
                median_utilization_per_level: (0..levels)
                    .filter_map(|l| median(ok.iter().filter_map(|c| c.quality()).map(|q| q.utilization_per_level[l]).collect()))
                    .collect(),
                rmse_wins,
                utilization_wins,
                median_iterations_per_level: (0..levels)
                    .filter_map(|l| {
                        median(
                            ok.iter()
                                .filter_map(|c| match &c.outcome {
                                    CellOutcome::Ok { iterations_per_level, .. } => iterations_per_level.get(l).map(|&i| i as f64),
                                    CellOutcome::Failed { .. } => None,
                                })
                                .collect(),
                        )
                    })
                    .collect(),
                median_wall_ms: median(
                    ok.iter()
                        .filter_map(|c| match &c.outcome {
                            CellOutcome::Ok { wall_ms, .. } => Some(*wall_ms),
                            CellOutcome::Failed { .. } => None,
                        })
                        .collect(),
                ),
            }
        })
        .collect()
}

impl ComparisonReport {
    /// Copy with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for c in &mut r.cells {
            if let CellOutcome::Ok { wall_ms, .. } = &mut c.outcome {
                *wall_ms = 0.0;
            }
        }
        for s in &mut r.summaries {
            s.median_wall_ms = s.median_wall_ms.map(|_| 0.0);
        }
        r
    }

    /// One row per cell, tab separated, with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("method\tseed\tstatus\trmse");
        for l in 1..=self.levels {
            let _ = write!(out, "\tutil_l{l}");
        }
        for l in 1..=self.levels {
            let _ = write!(out, "\titers_l{l}");
        }
        out.push_str("\twall_ms\n");
        for c in &self.cells {
            let _ = write!(out, "{}\t{}", c.method, c.seed);
            match &c.outcome {
                CellOutcome::Ok {
                    quality,
                    iterations_per_level,
                    wall_ms,
                } => {
                    let _ = write!(out, "\tok\t{}", quality.rmse);
                    for l in 0..self.levels {
                        match quality.utilization_per_level.get(l) {
                            Some(u) => write!(out, "\t{u}"),
                            None => write!(out, "\t"),
                        }
                        .ok();
                    }
                    for l in 0..self.levels {
                        match iterations_per_level.get(l) {
                            Some(i) => write!(out, "\t{i}"),
                            None => write!(out, "\t"),
                        }
                        .ok();
                    }
                    let _ = writeln!(out, "\t{wall_ms:.3}");
                }
                CellOutcome::Failed { .. } => {
                    out.push_str("\tfailed\t");
                    for _ in 0..2 * self.levels {
                        out.push('\t');
                    }
                    out.push_str("\t\n");
                }
            }
        }
        out
    }

    /// Human-readable summary in the layout of a method-by-metric table.
    pub fn render_summary(&self) -> String {
        let mut out = format!(
            "{} seeds, L={}, K={}, n={}, d={}\n",
            self.seeds.len(),
            self.levels,
            self.k,
            self.spec.n,
            self.spec.d
        );
        let _ = writeln!(out, "{:<10} {:>10} {:>22} {:>9} {:>9} {:>8}", "method", "rmse", "util (%)", "rmse win", "util win", "failed");
        for s in &self.summaries {
            let util = s
                .median_utilization_per_level
                .iter()
                .map(|u| format!("{:.1}", u * 100.0))
                .collect::<Vec<_>>()
                .join(" / ");
            let rmse = s.median_rmse.map_or("-".to_string(), |r| format!("{r:.5}"));
            let _ = writeln!(
                out,
                "{:<10} {:>10} {:>22} {:>9} {:>9} {:>8}",
                s.method.as_str(),
                rmse,
                util,
                s.rmse_wins,
                s.utilization_wins,
                s.failed
            );
        }
        out
    }
}
