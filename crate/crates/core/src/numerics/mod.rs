//! Dense matrices, stable special functions, seeded sampling and a
//! finite-difference gradient checker.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub use rng::{streams, Rng};

use crate::error::{Error, Result};

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Clamp applied to uniforms before Gumbel and Box-Muller transforms.
pub const UNIFORM_CLAMP: f64 = 1e-12;

/// `log Σ exp(v_i)` with max-shift. Entries may be `-inf`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    let max = v
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() {
        return Err(Error::EmptyVector);
    }
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let s: f64 = v.iter().map(|&x| (x - max).exp()).sum();
    Ok(max + s.ln())
}

/// In-place softmax via max-shift; `v` must be non-empty.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Log density of a diagonal Gaussian parameterized by log-variances.
pub fn gaussian_diag_logpdf(x: &[f64], mu: &[f64], log_var: &[f64]) -> Result<f64> {
    if x.len() != mu.len() || x.len() != log_var.len() {
        return Err(Error::DimensionMismatch {
            context: "gaussian_diag_logpdf",
            expected: x.len(),
            found: if mu.len() != x.len() {
                mu.len()
            } else {
                log_var.len()
            },
        });
    }
    Ok(x
        .iter()
        .zip(mu)
        .zip(log_var)
        .map(|((&x, &m), &lv)| {
            let d = x - m;
            -0.5 * LN_2PI - 0.5 * lv - d * d * 0.5 * (-lv).exp()
        })
        .sum())
}

/// i.i.d. standard normal draws by Box-Muller, row-major fill.
pub fn sample_standard_normal(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let n = rows * cols;
    let mut data = Vec::with_capacity(n + 1);
    while data.len() < n {
        let u1 = rng.uniform_open(UNIFORM_CLAMP);
        let u2 = rng.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        data.push(r * theta.cos());
        data.push(r * theta.sin());
    }
    data.truncate(n);
    Matrix::new(rows, cols, data).expect("length matches by construction")
}

/// Gumbel transform of one uniform, after clamping it into
/// `[UNIFORM_CLAMP, 1 - UNIFORM_CLAMP]`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
    -(-u.ln()).ln()
}

/// `n` standard Gumbel draws.
pub fn sample_gumbel(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gumbel_from_uniform(rng.uniform())).collect()
}

/// Central-difference gradient of `f` at `p` with step `h`.
pub fn finite_diff_grad<F>(mut f: F, p: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let mut work = p.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for j in 0..p.len() {
        work[j] = p[j] + h;
        let fp = f(&work);
        work[j] = p[j] - h;
        let fm = f(&work);
        work[j] = p[j];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteEvaluation { index: j });
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let v = log_sum_exp(&[-1000.0, -1000.0]).unwrap();
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        // Oracle: direct summation (no overflow at this scale).
        let direct = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        assert!((direct - 3.407_605_964_444_380).abs() < 1e-12);
        assert!((log_sum_exp(&[1.0, 2.0, 3.0]).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_handles_neg_infinity_and_empty() {
        assert!(matches!(log_sum_exp(&[]), Err(Error::EmptyVector)));
        let v = log_sum_exp(&[f64::NEG_INFINITY, 0.0]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(log_sum_exp(&[700.0, 700.0]).unwrap().is_finite());
        assert!(log_sum_exp(&[-700.0, 700.0]).unwrap().is_finite());
    }

    #[test]
    fn logpdf_examples() {
        let half_ln_2pi = 0.918_938_533_204_672_7;
        let a = gaussian_diag_logpdf(&[0.0], &[0.0], &[0.0]).unwrap();
        assert!((a + half_ln_2pi).abs() < 1e-14);
        let b = gaussian_diag_logpdf(&[1.0], &[0.0], &[0.0]).unwrap();
        assert!((b + half_ln_2pi + 0.5).abs() < 1e-14);

        // Oracle: product of univariate densities written out directly.
        let p1 = (-(1.0f64).powi(2) / (2.0 * 4.0)).exp() / (2.0 * std::f64::consts::PI * 4.0).sqrt();
        let p2 = (-(1.0f64).powi(2) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let c = gaussian_diag_logpdf(&[1.0, 2.0], &[0.0, 1.0], &[4f64.ln(), 0.0]).unwrap();
        assert!((c - (p1 * p2).ln()).abs() < 1e-13);

        assert!(gaussian_diag_logpdf(&[1.0], &[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn standard_normal_moments() {
        let mut rng = Rng::new(2024);
        let z = sample_standard_normal(&mut rng, 1000, 1000);
        let n = z.as_slice().len() as f64;
        let mean = z.sum() / n;
        let var = z.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.005, "mean {mean}");
        assert!((var - 1.0).abs() <= 0.005, "var {var}");
    }

    #[test]
    fn standard_normal_is_deterministic() {
        let a = sample_standard_normal(&mut Rng::new(9), 3, 5);
        let b = sample_standard_normal(&mut Rng::new(9), 3, 5);
        assert_eq!(a, b);
        assert_eq!(a.shape(), (3, 5));
    }

    #[test]
    fn gumbel_fixed_point_and_mean() {
        assert!(gumbel_from_uniform((-1.0f64).exp()).abs() < 1e-15);
        assert!(gumbel_from_uniform(0.0).is_finite());
        assert!(gumbel_from_uniform(1.0).is_finite());
        let g = sample_gumbel(&mut Rng::new(5), 1_000_000);
        assert!(g.iter().all(|v| v.is_finite()));
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        assert!((mean - 0.577_215_664_901_532_9).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|p| p.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let g = finite_diff_grad(|p| p[0] * p[1], &[3.0, 5.0], 1e-5).unwrap();
        assert!((g[0] - 5.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_reports_offending_index() {
        let err = finite_diff_grad(
            |p| if p[1] > 1.0 { f64::NAN } else { p[0] },
            &[0.0, 1.0],
            1e-3,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteEvaluation { index: 1 }));
    }

    #[test]
    fn logpdf_normalizes() {
        // Importance sampling from a proposal twice as wide in each dimension.
        let mu = [0.3, -1.2];
        let log_var = [0.5f64.ln(), 2f64.ln()];
        let prop_lv: Vec<f64> = log_var.iter().map(|lv| lv + 4f64.ln()).collect();
        let mut rng = Rng::new(77);
        let eps = sample_standard_normal(&mut rng, 1_000_000, 2);
        let mut acc = 0.0;
        for row in eps.row_iter() {
            let x: Vec<f64> = (0..2)
                .map(|j| mu[j] + (0.5 * prop_lv[j]).exp() * row[j])
                .collect();
            let lp = gaussian_diag_logpdf(&x, &mu, &log_var).unwrap();
            let lq = gaussian_diag_logpdf(&x, &mu, &prop_lv).unwrap();
            acc += (lp - lq).exp();
        }
        let est = acc / eps.rows() as f64;
        assert!((est - 1.0).abs() < 0.01, "estimate {est}");
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn log_sum_exp_shift_invariant(
                v in prop::collection::vec(-300.0f64..300.0, 1..20),
                c in -300.0f64..300.0,
            ) {
                let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
                let lhs = log_sum_exp(&shifted).unwrap();
                let rhs = log_sum_exp(&v).unwrap() + c;
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }

            #[test]
            fn softmax_is_probability_vector(v in prop::collection::vec(-50.0f64..50.0, 1..12)) {
                let p = softmax(&v);
                prop_assert!(p.iter().all(|&x| x >= 0.0));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
