//! Label matching between fitted codes and ground-truth clusters.

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian
/// method with row/column potentials, O(n^3)). Returns `assign[row] = col`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    assert!(cost.iter().all(|r| r.len() == n), "cost matrix must be square");
    // 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let cur = cost[r0 - 1][col - 1] - u[r0] - v[col];
                if cur < minv[col] {
                    minv[col] = cur;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for col in 1..=n {
        if owner[col] != 0 {
            assign[owner[col] - 1] = col - 1;
        }
    }
    assign
}

/// `confusion[p][t]` counts samples with predicted label `p` and true label `t`.
pub fn confusion(pred: &[usize], truth: &[usize], k_pred: usize, k_true: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; k_true]; k_pred];
    for (&p, &t) in pred.iter().zip(truth) {
        m[p][t] += 1;
    }
    m
}

/// Fraction of samples whose predicted label maps to their true label under
/// the best one-to-one relabeling.
pub fn matched_accuracy(pred: &[usize], truth: &[usize], k_pred: usize, k_true: usize) -> f64 {
    if pred.is_empty() {
        return 1.0;
    }
    let conf = confusion(pred, truth, k_pred, k_true);
    let n = k_pred.max(k_true);
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|p| {
            (0..n)
                .map(|t| {
                    let c = conf.get(p).and_then(|r| r.get(t)).copied().unwrap_or(0);
                    -(c as f64)
                })
                .collect()
        })
        .collect();
    let assign = min_cost_assignment(&cost);
    let hits: u64 = assign
        .iter()
        .enumerate()
        .map(|(p, &t)| conf.get(p).and_then(|r| r.get(t)).copied().unwrap_or(0))
        .sum();
    hits as f64 / pred.len() as f64
}
