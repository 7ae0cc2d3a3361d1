//! Diagonal Gaussian mixture prior over the latent space, and EM for fitting it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSegments;
use crate::numerics::{gaussian_diag_logpdf, log_sum_exp, softmax, softmax_in_place, Matrix, Rng};

/// Default lower bound on every component variance.
pub const DEFAULT_VAR_FLOOR: f64 = 1e-4;

/// Mixture parameters. Weights are stored as unconstrained logits so that
/// gradient updates stay on the simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub logits: Vec<f64>,
    /// `K × J` component means.
    pub mu: Matrix,
    /// `K × J` component log-variances, each ≥ `ln(var_floor)`.
    pub log_var: Matrix,
    pub var_floor: f64,
}

/// Gradient with respect to every [`GmmParams`] field except the floor.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmGrads {
    pub logits: Vec<f64>,
    pub mu: Matrix,
    pub log_var: Matrix,
}

impl GmmGrads {
    pub fn zeros(k: usize, j: usize) -> Self {
        GmmGrads {
            logits: vec![0.0; k],
            mu: Matrix::zeros(k, j),
            log_var: Matrix::zeros(k, j),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.logits.clone();
        out.extend_from_slice(self.mu.as_slice());
        out.extend_from_slice(self.log_var.as_slice());
        out
    }

    pub fn scale(&mut self, s: f64) {
        self.logits.iter_mut().for_each(|v| *v *= s);
        self.mu.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        self.log_var.as_mut_slice().iter_mut().for_each(|v| *v *= s);
    }
}

impl GmmParams {
    /// Build from mixture weights (must be positive and sum to one).
    pub fn new(pi: &[f64], mu: Matrix, log_var: Matrix, var_floor: f64) -> Result<Self> {
        let k = pi.len();
        if k == 0 {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        if mu.rows() != k || log_var.shape() != mu.shape() {
            return Err(Error::DimensionMismatch {
                context: "GmmParams::new",
                expected: k,
                found: mu.rows(),
            });
        }
        if pi.iter().any(|&p| !(p > 0.0)) || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights must be positive and sum to 1, got {pi:?}"
            )));
        }
        if !(var_floor > 0.0) {
            return Err(Error::InvalidArgument("variance floor must be positive".into()));
        }
        let mut params = GmmParams {
            logits: pi.iter().map(|p| p.ln()).collect(),
            mu,
            log_var,
            var_floor,
        };
        params.enforce_floor();
        Ok(params)
    }

    pub fn k(&self) -> usize {
        self.logits.len()
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }

    pub fn pi(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn log_pi(&self) -> Vec<f64> {
        let lse = log_sum_exp(&self.logits).expect("K >= 1");
        self.logits.iter().map(|l| l - lse).collect()
    }

    pub fn log_var_floor(&self) -> f64 {
        self.var_floor.ln()
    }

    /// Project log-variances back above the floor.
    pub fn enforce_floor(&mut self) {
        let floor = self.log_var_floor();
        for v in self.log_var.as_mut_slice() {
            if *v < floor {
                *v = floor;
            }
        }
    }

    /// Apply the component permutation `perm` (new index `c` takes old
    /// component `perm[c]`).
    pub fn permuted(&self, perm: &[usize]) -> GmmParams {
        GmmParams {
            logits: perm.iter().map(|&c| self.logits[c]).collect(),
            mu: self.mu.select_rows(perm),
            log_var: self.log_var.select_rows(perm),
            var_floor: self.var_floor,
        }
    }

    /// `log π_c + log N(z; μ_c, σ_c²)` for every component.
    pub fn log_joint(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "gmm log_joint",
                expected: self.dim(),
                found: z.len(),
            });
        }
        let log_pi = self.log_pi();
        (0..self.k())
            .map(|c| Ok(log_pi[c] + gaussian_diag_logpdf(z, self.mu.row(c), self.log_var.row(c))?))
            .collect()
    }

    /// Log mixture density `log p(z)`.
    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        log_sum_exp(&self.log_joint(z)?)
    }

    /// Posterior `p(c | z)`.
    pub fn responsibilities(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.log_joint(z)?;
        softmax_in_place(&mut r);
        Ok(r)
    }
}

impl ParamSegments for GmmParams {
    fn segments(&self) -> Vec<(String, &[f64])> {
        vec![
            ("gmm logits".into(), self.logits.as_slice()),
            ("gmm means".into(), self.mu.as_slice()),
            ("gmm log-variances".into(), self.log_var.as_slice()),
        ]
    }

    fn segments_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("gmm logits".into(), self.logits.as_mut_slice()),
            ("gmm means".into(), self.mu.as_mut_slice()),
            ("gmm log-variances".into(), self.log_var.as_mut_slice()),
        ]
    }
}

impl ParamSegments for GmmGrads {
    fn segments(&self) -> Vec<(String, &[f64])> {
        vec![
            ("gmm logits".into(), self.logits.as_slice()),
            ("gmm means".into(), self.mu.as_slice()),
            ("gmm log-variances".into(), self.log_var.as_slice()),
        ]
    }

    fn segments_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("gmm logits".into(), self.logits.as_mut_slice()),
            ("gmm means".into(), self.mu.as_mut_slice()),
            ("gmm log-variances".into(), self.log_var.as_mut_slice()),
        ]
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: returns `k` row indices of `data`.
pub fn kmeans_plus_plus(rng: &mut Rng, data: &Matrix, k: usize) -> Result<Vec<usize>> {
    let n = data.rows();
    if k == 0 || n < k {
        return Err(Error::NotEnoughData(format!(
            "k-means++ needs at least k = {k} points, got {n}"
        )));
    }
    let mut chosen = vec![rng.below(n)];
    let mut d2: Vec<f64> = data
        .row_iter()
        .map(|row| squared_distance(row, data.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let next = if d2.iter().sum::<f64>() > 0.0 {
            rng.weighted_index(&d2)
        } else {
            // All remaining points coincide with a chosen center.
            (0..n).find(|i| !chosen.contains(i)).expect("n >= k")
        };
        chosen.push(next);
        for (i, row) in data.row_iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(row, data.row(next)));
        }
    }
    Ok(chosen)
}

#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub centers: Matrix,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

/// Lloyd's algorithm from k-means++ seeds.
pub fn kmeans(rng: &mut Rng, data: &Matrix, k: usize, max_iters: usize) -> Result<KMeansFit> {
    let seeds = kmeans_plus_plus(rng, data, k)?;
    let mut centers = data.select_rows(&seeds);
    let mut assignments = vec![usize::MAX; data.rows()];
    let mut inertia = 0.0;
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        inertia = 0.0;
        for (i, row) in data.row_iter().enumerate() {
            let (best, dist) = (0..k)
                .map(|c| (c, squared_distance(row, centers.row(c))))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            inertia += dist;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Matrix::zeros(k, data.cols());
        let mut counts = vec![0usize; k];
        for (row, &c) in data.row_iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(row) {
                *s += v;
            }
        }
        for c in 0..k {
            // Empty clusters keep their previous center.
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
    }
    Ok(KMeansFit {
        centers,
        assignments,
        inertia,
    })
}

/// Result of [`gmm_fit_em`]: the fitted mixture plus the mean per-point
/// log-likelihood after initialization and after every M-step.
#[derive(Clone, Debug)]
pub struct EmFit {
    pub params: GmmParams,
    pub log_likelihood: Vec<f64>,
    pub rescued_components: usize,
}

/// Diagonal-covariance EM seeded by k-means++. Stops once the mean per-point
/// log-likelihood improves by less than `tol`, or after `max_iters` M-steps.
pub fn gmm_fit_em(
    rng: &mut Rng,
    z: &Matrix,
    k: usize,
    max_iters: usize,
    tol: f64,
    var_floor: f64,
) -> Result<EmFit> {
    let (n, j) = z.shape();
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if n < k {
        return Err(Error::NotEnoughData(format!(
            "EM needs at least K = {k} points, got {n}"
        )));
    }
    if j == 0 {
        return Err(Error::InvalidArgument("latent dimension must be at least 1".into()));
    }
    if !(var_floor > 0.0) {
        return Err(Error::InvalidArgument("variance floor must be positive".into()));
    }

    let global_var: Vec<f64> = {
        let mean: Vec<f64> = z.column_sums().iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; j];
        for row in z.row_iter() {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter().map(|v| (v / n as f64).max(var_floor)).collect()
    };

    let seeds = kmeans_plus_plus(rng, z, k)?;
    let mu = z.select_rows(&seeds);
    let mut log_var = Matrix::zeros(k, j);
    for c in 0..k {
        for (dst, v) in log_var.row_mut(c).iter_mut().zip(&global_var) {
            *dst = v.ln();
        }
    }
    let mut params = GmmParams::new(&vec![1.0 / k as f64; k], mu, log_var, var_floor)?;

    let (mut resp, mut ll) = e_step(&params, z)?;
    let mut trace = vec![ll];
    let mut rescued = 0;
    for _ in 0..max_iters {
        rescued += m_step(&mut params, z, &mut resp, &global_var);
        let (next_resp, next_ll) = e_step(&params, z)?;
        resp = next_resp;
        trace.push(next_ll);
        let improvement = next_ll - ll;
        ll = next_ll;
        if improvement < tol {
            break;
        }
    }
    Ok(EmFit {
        params,
        log_likelihood: trace,
        rescued_components: rescued,
    })
}

fn e_step(params: &GmmParams, z: &Matrix) -> Result<(Matrix, f64)> {
    let k = params.k();
    let mut resp = Matrix::zeros(z.rows(), k);
    let mut total = 0.0;
    for (i, row) in z.row_iter().enumerate() {
        let lj = params.log_joint(row)?;
        let lse = log_sum_exp(&lj)?;
        total += lse;
        for (dst, l) in resp.row_mut(i).iter_mut().zip(&lj) {
            *dst = (l - lse).exp();
        }
    }
    Ok((resp, total / z.rows() as f64))
}

/// Returns the number of components that had to be re-seeded.
fn m_step(params: &mut GmmParams, z: &Matrix, resp: &mut Matrix, global_var: &[f64]) -> usize {
    let (n, j) = z.shape();
    let k = params.k();
    let mut rescued = 0;
    let mut mass = resp.column_sums();
    for c in 0..k {
        if mass[c] < 1e-8 {
            // Re-seed at the point the mixture explains least confidently.
            let target = (0..n)
                .min_by(|&a, &b| {
                    let ma = resp.row(a).iter().copied().fold(0.0, f64::max);
                    let mb = resp.row(b).iter().copied().fold(0.0, f64::max);
                    ma.total_cmp(&mb)
                })
                .expect("n >= 1");
            let row = resp.row_mut(target);
            row.iter_mut().for_each(|r| *r = 0.0);
            row[c] = 1.0;
            mass = resp.column_sums();
            rescued += 1;
        }
    }
    let floor = params.log_var_floor();
    for c in 0..k {
        let nk = mass[c];
        let mut mean = vec![0.0; j];
        for (row, r) in z.row_iter().zip(resp.column(c)) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += r * x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut var = vec![0.0; j];
        for (row, r) in z.row_iter().zip(resp.column(c)) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += r * (x - m) * (x - m);
            }
        }
        for (jj, v) in var.iter().enumerate() {
            let mut lv = (v / nk).ln();
            if !lv.is_finite() {
                lv = global_var[jj].ln();
            }
            params.log_var[(c, jj)] = lv.max(floor);
        }
        params.mu.row_mut(c).copy_from_slice(&mean);
        params.logits[c] = (nk / n as f64).ln();
    }
    rescued
}
