//! Clustering metrics: Hungarian-matched accuracy, normalized mutual
//! information, and per-cluster profile tables in raw units.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns `assignment` with row `i` matched to column `assignment[i]`.
/// O(K³) shortest-augmenting-path formulation with row and column potentials.
pub fn hungarian(cost: &Matrix) -> Result<Vec<usize>> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(Error::DimensionMismatch {
            context: "hungarian cost matrix must be square",
            expected: n,
            found: cost.cols(),
        });
    }
    if !cost.is_finite() {
        return Err(Error::InvalidArgument("hungarian costs must be finite".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based indexing; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[col_owner[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// Total cost of an assignment.
pub fn assignment_cost(cost: &Matrix, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum()
}

/// Counts of (predicted, true) label pairs, padded to a square table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub counts: Matrix,
}

impl ContingencyTable {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                context: "predicted vs true label count",
                expected: truth.len(),
                found: pred.len(),
            });
        }
        if pred.is_empty() {
            return Err(Error::EmptyVector);
        }
        let kp = pred.iter().max().map_or(0, |m| m + 1);
        let kt = truth.iter().max().map_or(0, |m| m + 1);
        let k = kp.max(kt);
        let mut counts = Matrix::zeros(k, k);
        for (&p, &t) in pred.iter().zip(truth) {
            counts.as_mut_slice()[p * k + t] += 1.0;
        }
        Ok(ContingencyTable { counts })
    }

    pub fn total(&self) -> f64 {
        self.counts.sum()
    }

    /// Best one-to-one mapping from predicted to true labels.
    pub fn matching(&self) -> Result<Vec<usize>> {
        hungarian(&self.counts.scale(-1.0))
    }
}

/// Fraction of samples correctly labelled under the best cluster-to-class
/// matching.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let matching = table.matching()?;
    let matched = assignment_cost(&table.counts, &matching);
    Ok(matched / table.total())
}

fn entropy(counts: impl Iterator<Item = f64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0.0)
        .map(|c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of the two label
/// entropies. Both sides single-cluster counts as perfect agreement (1.0).
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let n = table.total();
    let k = table.counts.rows();
    let row_sums: Vec<f64> = (0..k).map(|i| table.counts.row(i).iter().sum()).collect();
    let col_sums = table.counts.column_sums();
    let h_pred = entropy(row_sums.iter().copied(), n);
    let h_true = entropy(col_sums.iter().copied(), n);
    let denom = 0.5 * (h_pred + h_true);
    if denom == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for i in 0..k {
        for j in 0..k {
            let c = table.counts[(i, j)];
            if c > 0.0 {
                mi += c / n * (c * n / (row_sums[i] * col_sums[j])).ln();
            }
        }
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Mean and standard deviation of one column within one cluster.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub cluster: usize,
    pub count: usize,
    /// `None` for empty clusters.
    pub stats: Option<Vec<ColumnStat>>,
}

/// Per-cluster summary of every feature and guide column in raw units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub columns: Vec<String>,
    pub clusters: Vec<ClusterRow>,
}

/// Profiles `k` clusters (at least one more than the largest assignment).
/// Standard deviations are population values.
pub fn cluster_profiles(dataset: &Dataset, assignments: &[usize], k: usize) -> Result<ClusterProfile> {
    if assignments.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            context: "assignments vs dataset rows",
            expected: dataset.len(),
            found: assignments.len(),
        });
    }
    let k = k.max(assignments.iter().max().map_or(0, |m| m + 1));
    let raw = dataset.x_raw().hstack(&dataset.y_raw())?;
    let columns: Vec<String> = dataset
        .feature_names
        .iter()
        .chain(&dataset.guide_names)
        .cloned()
        .collect();
    let d = raw.cols();
    let mut count = vec![0usize; k];
    let mut sum = Matrix::zeros(k, d);
    for (i, &c) in assignments.iter().enumerate() {
        count[c] += 1;
        for (s, v) in sum.row_mut(c).iter_mut().zip(raw.row(i)) {
            *s += v;
        }
    }
    let mut means = sum;
    for c in 0..k {
        if count[c] > 0 {
            let n = count[c] as f64;
            means.row_mut(c).iter_mut().for_each(|m| *m /= n);
        }
    }
    // Two-pass variance for accuracy.
    let mut sq = Matrix::zeros(k, d);
    for (i, &c) in assignments.iter().enumerate() {
        for j in 0..d {
            let dev = raw[(i, j)] - means[(c, j)];
            sq.row_mut(c)[j] += dev * dev;
        }
    }
    let clusters = (0..k)
        .map(|c| ClusterRow {
            cluster: c,
            count: count[c],
            stats: (count[c] > 0).then(|| {
                (0..d)
                    .map(|j| ColumnStat {
                        mean: means[(c, j)],
                        std: (sq[(c, j)] / count[c] as f64).sqrt(),
                    })
                    .collect()
            }),
        })
        .collect();
    Ok(ClusterProfile { columns, clusters })
}

impl ClusterProfile {
    /// One row per cluster: `cluster,count,<col>_mean,<col>_std,...`.
    /// Empty clusters leave the statistics blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cluster,count");
        for c in &self.columns {
            let _ = write!(out, ",{c}_mean,{c}_std");
        }
        out.push('\n');
        for row in &self.clusters {
            let _ = write!(out, "{},{}", row.cluster, row.count);
            match &row.stats {
                Some(stats) => {
                    for s in stats {
                        let _ = write!(out, ",{},{}", s.mean, s.std);
                    }
                }
                None => out.push_str(&",".repeat(2 * self.columns.len())),
            }
            out.push('\n');
        }
        out
    }

    /// Aligned plain-text table with one `mean ± std` cell per column.
    pub fn to_text(&self) -> String {
        let mut header = vec!["cluster".to_string(), "count".to_string()];
        header.extend(self.columns.iter().cloned());
        let mut rows = vec![header];
        for r in &self.clusters {
            let mut cells = vec![r.cluster.to_string(), r.count.to_string()];
            match &r.stats {
                Some(stats) => cells.extend(stats.iter().map(|s| format!("{:.4} ± {:.4}", s.mean, s.std))),
                None => cells.extend(self.columns.iter().map(|_| "-".to_string())),
            }
            rows.push(cells);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(cell, &w)| format!("{cell:>w$}"))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
