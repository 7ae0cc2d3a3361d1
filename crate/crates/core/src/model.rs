//! The guided-clustering objective: encoder heads, reparameterized latent
//! samples, the Monte-Carlo cluster posterior, the five-term ELBO, the
//! clusterless pretraining ELBO, and their analytic gradients.
//!
//! Conventions:
//!
//! * The encoder emits `2J` columns: `J` latent means followed by `J`
//!   log-variances, the latter clamped to `[ln var_floor, LOG_VAR_MAX]`.
//! * The cluster posterior `q(c|x)` is the latent-sample average of the
//!   mixture responsibilities. It is treated as a constant when
//!   differentiating: it is recomputed from fresh samples every step.
//! * Additive constants are dropped from the objective. The `J/2·ln 2π` from
//!   the cross-entropy term cancels against the one in the latent entropy, and
//!   the reconstruction term is the negated squared error without the Gaussian
//!   normalizer or the factor one half.
//! * Every term is a sum over the rows of the batch, not a mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{GmmGrads, GmmParams};
use crate::nn::{MlpCache, MlpGrads, MlpParams};
use crate::numerics::{gumbel_from_uniform, sample_standard_normal, softmax_in_place, Matrix, Rng};

/// Upper clamp on encoder log-variances.
pub const LOG_VAR_MAX: f64 = 10.0;

/// Gaussian variational posterior `q(z|x)` for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub mu: Matrix,
    /// Clamped log-variances.
    pub log_var: Matrix,
    /// 1 where the clamp was inactive, 0 where it saturated.
    clamp_mask: Matrix,
}

impl EncoderOutput {
    /// Assemble from explicit means and log-variances (clamped to
    /// `[ln var_floor, LOG_VAR_MAX]`).
    pub fn new(mu: Matrix, log_var: Matrix, var_floor: f64) -> Result<Self> {
        if mu.shape() != log_var.shape() {
            return Err(Error::DimensionMismatch {
                context: "EncoderOutput::new",
                expected: mu.cols(),
                found: log_var.cols(),
            });
        }
        let lo = var_floor.ln();
        let clamp_mask = log_var.map(|v| if v < lo || v > LOG_VAR_MAX { 0.0 } else { 1.0 });
        let log_var = log_var.map(|v| v.clamp(lo, LOG_VAR_MAX));
        Ok(EncoderOutput {
            mu,
            log_var,
            clamp_mask,
        })
    }

    pub fn n(&self) -> usize {
        self.mu.rows()
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }
}

/// One reparameterized draw `z = μ̃ + σ̃ ⊙ ε` for every row.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub z: Matrix,
    pub eps: Matrix,
}

impl LatentSample {
    pub fn from_noise(enc: &EncoderOutput, eps: Matrix) -> Result<Self> {
        if eps.shape() != enc.mu.shape() {
            return Err(Error::DimensionMismatch {
                context: "latent noise",
                expected: enc.mu.cols(),
                found: eps.cols(),
            });
        }
        let sd = enc.log_var.map(|lv| (0.5 * lv).exp());
        let z = enc.mu.add(&sd.hadamard(&eps)?)?;
        Ok(LatentSample { z, eps })
    }
}

/// Per-row cluster posterior `q(c|x)`, `n × K`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterPosterior {
    pub q: Matrix,
}

impl ClusterPosterior {
    pub fn n(&self) -> usize {
        self.q.rows()
    }

    pub fn k(&self) -> usize {
        self.q.cols()
    }
}

/// The developed ELBO, one field per term, each carrying the sign with which
/// it enters the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    /// Negated squared reconstruction error of `y`, averaged over samples.
    pub recon: f64,
    /// `E_q[ln p(z|c)]` without its `ln 2π` constant.
    pub cross_entropy_zc: f64,
    /// `E_q[ln π_c]`.
    pub log_prior_c: f64,
    /// Entropy of `q(z|x)` without its `ln 2π` constant.
    pub entropy_z: f64,
    /// Entropy of `q(c|x)`.
    pub entropy_c: f64,
    pub beta: f64,
    pub total: f64,
}

impl ElboBreakdown {
    fn assemble(
        recon: f64,
        cross_entropy_zc: f64,
        log_prior_c: f64,
        entropy_z: f64,
        entropy_c: f64,
        beta: f64,
    ) -> Result<Self> {
        for (term, v) in [
            ("recon", recon),
            ("cross_entropy_zc", cross_entropy_zc),
            ("log_prior_c", log_prior_c),
            ("entropy_z", entropy_z),
            ("entropy_c", entropy_c),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFiniteTerm { term });
            }
        }
        let total = recon + beta * (cross_entropy_zc + log_prior_c + entropy_z + entropy_c);
        if !total.is_finite() {
            return Err(Error::NonFiniteTerm { term: "total" });
        }
        Ok(ElboBreakdown {
            recon,
            cross_entropy_zc,
            log_prior_c,
            entropy_z,
            entropy_c,
            beta,
            total,
        })
    }

    /// The divergence between the variational posterior and the prior that
    /// the regularizer penalizes: `-(terms 2..5)`.
    pub fn kl(&self) -> f64 {
        -(self.cross_entropy_zc + self.log_prior_c + self.entropy_z + self.entropy_c)
    }

    /// Field-wise sum, used to accumulate per-batch values over an epoch.
    pub fn accumulate(&mut self, other: &ElboBreakdown) {
        self.recon += other.recon;
        self.cross_entropy_zc += other.cross_entropy_zc;
        self.log_prior_c += other.log_prior_c;
        self.entropy_z += other.entropy_z;
        self.entropy_c += other.entropy_c;
        self.total += other.total;
        self.beta = other.beta;
    }
}

fn split_encoder_output(h: &Matrix, var_floor: f64) -> Result<EncoderOutput> {
    if h.cols() % 2 != 0 || h.cols() == 0 {
        return Err(Error::DimensionMismatch {
            context: "encoder output width (must be 2J)",
            expected: h.cols() + 1,
            found: h.cols(),
        });
    }
    let j = h.cols() / 2;
    EncoderOutput::new(h.columns(0..j), h.columns(j..2 * j), var_floor)
}

/// Run the encoder and split its output into mean and log-variance heads.
pub fn encode(encoder: &MlpParams, x: &Matrix, var_floor: f64) -> Result<EncoderOutput> {
    split_encoder_output(&encoder.predict(x)?, var_floor)
}

fn encode_with_cache(
    encoder: &MlpParams,
    x: &Matrix,
    var_floor: f64,
) -> Result<(EncoderOutput, MlpCache)> {
    let (h, cache) = encoder.forward(x)?;
    Ok((split_encoder_output(&h, var_floor)?, cache))
}

/// Standard-normal noise for `samples` draws at the encoder's shape.
pub fn draw_noise(rng: &mut Rng, enc: &EncoderOutput, samples: usize) -> Vec<Matrix> {
    (0..samples)
        .map(|_| sample_standard_normal(rng, enc.n(), enc.dim()))
        .collect()
}

pub fn reparameterize(rng: &mut Rng, enc: &EncoderOutput, samples: usize) -> Result<Vec<LatentSample>> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one latent sample".into()));
    }
    draw_noise(rng, enc, samples)
        .into_iter()
        .map(|eps| LatentSample::from_noise(enc, eps))
        .collect()
}

/// `q(c|x) ≈ (1/L) Σ_l p(c | z^(l))`.
pub fn cluster_posterior(gmm: &GmmParams, samples: &[LatentSample]) -> Result<ClusterPosterior> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one latent sample".into()))?;
    let (n, k) = (first.z.rows(), gmm.k());
    let mut q = Matrix::zeros(n, k);
    let weight = 1.0 / samples.len() as f64;
    for sample in samples {
        for i in 0..n {
            let r = gmm.responsibilities(sample.z.row(i))?;
            for (dst, v) in q.row_mut(i).iter_mut().zip(r) {
                *dst += weight * v;
            }
        }
    }
    Ok(ClusterPosterior { q })
}

fn recon_term(decoder: &MlpParams, y: &Matrix, samples: &[LatentSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let pred = decoder.predict(&s.z)?;
        if pred.shape() != y.shape() {
            return Err(Error::DimensionMismatch {
                context: "decoder output vs targets",
                expected: y.cols(),
                found: pred.cols(),
            });
        }
        total += pred
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(p, t)| (t - p) * (t - p))
            .sum::<f64>();
    }
    Ok(-total / samples.len() as f64)
}

fn entropy_z(enc: &EncoderOutput) -> f64 {
    0.5 * enc.log_var.as_slice().iter().map(|lv| 1.0 + lv).sum::<f64>()
}

fn check_posterior(q: &ClusterPosterior, n: usize, k: usize) -> Result<()> {
    if q.n() != n || q.k() != k {
        return Err(Error::DimensionMismatch {
            context: "cluster posterior shape",
            expected: n * k,
            found: q.n() * q.k(),
        });
    }
    Ok(())
}

/// Terms 2, 3 and 5 of the developed ELBO.
fn mixture_terms(gmm: &GmmParams, enc: &EncoderOutput, q: &ClusterPosterior) -> (f64, f64, f64) {
    let log_pi = gmm.log_pi();
    let (mut cross, mut prior, mut ent) = (0.0, 0.0, 0.0);
    for i in 0..enc.n() {
        let (mu_i, lv_i) = (enc.mu.row(i), enc.log_var.row(i));
        for c in 0..gmm.k() {
            let qic = q.q[(i, c)];
            if qic == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for j in 0..enc.dim() {
                let s = gmm.log_var[(c, j)];
                let d = mu_i[j] - gmm.mu[(c, j)];
                inner += s + (lv_i[j] - s).exp() + d * d * (-s).exp();
            }
            cross -= 0.5 * qic * inner;
            prior += qic * log_pi[c];
            ent -= qic * qic.ln();
        }
    }
    (cross, prior, ent)
}

/// The five-term guided ELBO for one batch.
pub fn elbo(
    decoder: &MlpParams,
    gmm: &GmmParams,
    y: &Matrix,
    enc: &EncoderOutput,
    samples: &[LatentSample],
    q: &ClusterPosterior,
    beta: f64,
) -> Result<ElboBreakdown> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("need at least one latent sample".into()));
    }
    if gmm.dim() != enc.dim() {
        return Err(Error::DimensionMismatch {
            context: "latent dimension vs mixture",
            expected: gmm.dim(),
            found: enc.dim(),
        });
    }
    check_posterior(q, enc.n(), gmm.k())?;
    let recon = recon_term(decoder, y, samples)?;
    let (cross, prior, ent_c) = mixture_terms(gmm, enc, q);
    ElboBreakdown::assemble(recon, cross, prior, entropy_z(enc), ent_c, beta)
}

/// Closed-form `KL[q(z|x) || N(0, I)]` summed over the batch.
pub fn standard_normal_kl(enc: &EncoderOutput) -> f64 {
    0.5 * enc
        .mu
        .as_slice()
        .iter()
        .zip(enc.log_var.as_slice())
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

/// Clusterless pretraining objective `recon - β·KL[q(z|x) || N(0, I)]`.
///
/// The KL is reported split across `cross_entropy_zc` and `entropy_z` exactly
/// as the full ELBO would split it for a single standard-normal component;
/// the mixture-only terms are zero.
pub fn pretrain_elbo(
    decoder: &MlpParams,
    y: &Matrix,
    enc: &EncoderOutput,
    samples: &[LatentSample],
    beta: f64,
) -> Result<ElboBreakdown> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("need at least one latent sample".into()));
    }
    let recon = recon_term(decoder, y, samples)?;
    let ent_z = entropy_z(enc);
    let kl = standard_normal_kl(enc);
    ElboBreakdown::assemble(recon, -kl - ent_z, 0.0, ent_z, 0.0, beta)
}

/// Gradients of the ELBO `total` (an objective to maximize).
#[derive(Clone, Debug)]
pub struct ElboGradients {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
    /// Zero for the pretraining objective.
    pub gmm: Option<GmmGrads>,
    pub breakdown: ElboBreakdown,
    pub posterior: Option<ClusterPosterior>,
}

impl ElboGradients {
    /// Flip to the gradient of the loss `-total`.
    pub fn negate(&mut self) {
        self.encoder.scale(-1.0);
        self.decoder.scale(-1.0);
        if let Some(g) = &mut self.gmm {
            g.scale(-1.0);
        }
    }
}

/// Reconstruction path shared by both objectives: returns the term, the
/// decoder gradient, and accumulates `∂/∂μ̃`, `∂/∂ln σ̃²` into `dmu`, `dlv`.
fn recon_backward(
    decoder: &MlpParams,
    y: &Matrix,
    enc: &EncoderOutput,
    samples: &[LatentSample],
    dmu: &mut Matrix,
    dlv: &mut Matrix,
) -> Result<(f64, MlpGrads)> {
    let mut grads = MlpGrads::zeros_like(decoder);
    let inv_l = 1.0 / samples.len() as f64;
    let half_sd = enc.log_var.map(|lv| 0.5 * (0.5 * lv).exp());
    let mut recon = 0.0;
    for s in samples {
        let (pred, cache) = decoder.forward(&s.z)?;
        if pred.shape() != y.shape() {
            return Err(Error::DimensionMismatch {
                context: "decoder output vs targets",
                expected: y.cols(),
                found: pred.cols(),
            });
        }
        let diff = y.sub(&pred)?;
        recon -= inv_l * diff.as_slice().iter().map(|d| d * d).sum::<f64>();
        let dpred = diff.scale(2.0 * inv_l);
        let (dz, g) = decoder.backward(&cache, &dpred)?;
        grads.add_assign(&g)?;
        dmu.add_assign(&dz)?;
        dlv.add_assign(&dz.hadamard(&s.eps)?.hadamard(&half_sd)?)?;
    }
    Ok((recon, grads))
}

fn encoder_backward(
    encoder: &MlpParams,
    cache: &MlpCache,
    enc: &EncoderOutput,
    dmu: &Matrix,
    dlv: &Matrix,
) -> Result<MlpGrads> {
    let dh = dmu.hstack(&dlv.hadamard(&enc.clamp_mask)?)?;
    Ok(encoder.backward(cache, &dh)?.1)
}

fn check_noise(noise: &[Matrix]) -> Result<()> {
    if noise.is_empty() {
        return Err(Error::InvalidArgument("need at least one latent sample".into()));
    }
    Ok(())
}

/// Analytic gradient of the guided ELBO with explicit reparameterization
/// noise. When `posterior` is `None` it is estimated from the samples the
/// noise produces; either way it is held constant.
#[allow(clippy::too_many_arguments)]
pub fn elbo_gradients_with_noise(
    encoder: &MlpParams,
    decoder: &MlpParams,
    gmm: &GmmParams,
    x: &Matrix,
    y: &Matrix,
    beta: f64,
    noise: &[Matrix],
    posterior: Option<&ClusterPosterior>,
    var_floor: f64,
) -> Result<ElboGradients> {
    check_noise(noise)?;
    let (enc, enc_cache) = encode_with_cache(encoder, x, var_floor)?;
    if gmm.dim() != enc.dim() {
        return Err(Error::DimensionMismatch {
            context: "latent dimension vs mixture",
            expected: gmm.dim(),
            found: enc.dim(),
        });
    }
    let samples = noise
        .iter()
        .map(|eps| LatentSample::from_noise(&enc, eps.clone()))
        .collect::<Result<Vec<_>>>()?;
    let q = match posterior {
        Some(q) => q.clone(),
        None => cluster_posterior(gmm, &samples)?,
    };
    let (n, j, k) = (enc.n(), enc.dim(), gmm.k());
    check_posterior(&q, n, k)?;

    let mut dmu = Matrix::zeros(n, j);
    let mut dlv = Matrix::zeros(n, j);
    let (recon, dec_grads) = recon_backward(decoder, y, &enc, &samples, &mut dmu, &mut dlv)?;

    let mut gmm_grads = GmmGrads::zeros(k, j);
    let pi = gmm.pi();
    let log_pi = gmm.log_pi();
    let (mut cross, mut prior, mut ent_c) = (0.0, 0.0, 0.0);
    let inv_var: Vec<f64> = gmm.log_var.as_slice().iter().map(|s| (-s).exp()).collect();
    for i in 0..n {
        let mut row_mass = 0.0;
        for c in 0..k {
            let qic = q.q[(i, c)];
            row_mass += qic;
            gmm_grads.logits[c] += beta * qic;
            if qic == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for jj in 0..j {
                let s = gmm.log_var[(c, jj)];
                let iv = inv_var[c * j + jj];
                let lv = enc.log_var[(i, jj)];
                let d = enc.mu[(i, jj)] - gmm.mu[(c, jj)];
                let ratio = (lv - s).exp();
                inner += s + ratio + d * d * iv;
                dmu[(i, jj)] -= beta * qic * d * iv;
                dlv[(i, jj)] -= beta * 0.5 * qic * ratio;
                gmm_grads.mu[(c, jj)] += beta * qic * d * iv;
                gmm_grads.log_var[(c, jj)] -= beta * 0.5 * qic * (1.0 - ratio - d * d * iv);
            }
            cross -= 0.5 * qic * inner;
            prior += qic * log_pi[c];
            ent_c -= qic * qic.ln();
        }
        for c in 0..k {
            gmm_grads.logits[c] -= beta * pi[c] * row_mass;
        }
    }
    let ent_z = entropy_z(&enc);
    dlv.as_mut_slice().iter_mut().for_each(|v| *v += 0.5 * beta);

    let encoder_grads = encoder_backward(encoder, &enc_cache, &enc, &dmu, &dlv)?;
    let breakdown = ElboBreakdown::assemble(recon, cross, prior, ent_z, ent_c, beta)?;
    let grads = ElboGradients {
        encoder: encoder_grads,
        decoder: dec_grads,
        gmm: Some(gmm_grads),
        breakdown,
        posterior: Some(q),
    };
    check_gradients(&grads)?;
    Ok(grads)
}

/// Analytic gradient of the guided ELBO: draws `samples` latent samples
/// from `rng`, estimates `q(c|x)` from them, and differentiates with `q`
/// held fixed.
#[allow(clippy::too_many_arguments)]
pub fn elbo_backward(
    encoder: &MlpParams,
    decoder: &MlpParams,
    gmm: &GmmParams,
    x: &Matrix,
    y: &Matrix,
    beta: f64,
    samples: usize,
    var_floor: f64,
    rng: &mut Rng,
) -> Result<ElboGradients> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one latent sample".into()));
    }
    let noise: Vec<Matrix> = (0..samples)
        .map(|_| sample_standard_normal(rng, x.rows(), gmm.dim()))
        .collect();
    elbo_gradients_with_noise(encoder, decoder, gmm, x, y, beta, &noise, None, var_floor)
}

/// Analytic gradient of the pretraining objective for explicit noise.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_gradients_with_noise(
    encoder: &MlpParams,
    decoder: &MlpParams,
    x: &Matrix,
    y: &Matrix,
    beta: f64,
    noise: &[Matrix],
    var_floor: f64,
) -> Result<ElboGradients> {
    check_noise(noise)?;
    let (enc, enc_cache) = encode_with_cache(encoder, x, var_floor)?;
    let samples = noise
        .iter()
        .map(|eps| LatentSample::from_noise(&enc, eps.clone()))
        .collect::<Result<Vec<_>>>()?;
    let (n, j) = (enc.n(), enc.dim());
    let mut dmu = Matrix::zeros(n, j);
    let mut dlv = Matrix::zeros(n, j);
    let (_, dec_grads) = recon_backward(decoder, y, &enc, &samples, &mut dmu, &mut dlv)?;
    for i in 0..n {
        for jj in 0..j {
            let m = enc.mu[(i, jj)];
            let lv = enc.log_var[(i, jj)];
            dmu[(i, jj)] -= beta * m;
            dlv[(i, jj)] -= beta * 0.5 * (lv.exp() - 1.0);
        }
    }
    let encoder_grads = encoder_backward(encoder, &enc_cache, &enc, &dmu, &dlv)?;
    let breakdown = pretrain_elbo(decoder, y, &enc, &samples, beta)?;
    let grads = ElboGradients {
        encoder: encoder_grads,
        decoder: dec_grads,
        gmm: None,
        breakdown,
        posterior: None,
    };
    check_gradients(&grads)?;
    Ok(grads)
}

fn check_gradients(g: &ElboGradients) -> Result<()> {
    let bad = |v: &[f64]| v.iter().any(|x| !x.is_finite());
    if bad(&g.encoder.to_flat()) {
        return Err(Error::GradientOverflow {
            layer: "encoder".into(),
        });
    }
    if bad(&g.decoder.to_flat()) {
        return Err(Error::GradientOverflow {
            layer: "decoder".into(),
        });
    }
    if let Some(gg) = &g.gmm {
        if bad(&gg.to_flat()) {
            return Err(Error::GradientOverflow { layer: "gmm".into() });
        }
    }
    Ok(())
}

/// Relaxed categorical sample from explicit Gumbel noise:
/// `softmax((ln q + g) / τ)`.
pub fn gumbel_softmax_with_noise(q_row: &[f64], gumbel: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    if gumbel.len() != q_row.len() {
        return Err(Error::DimensionMismatch {
            context: "gumbel noise",
            expected: q_row.len(),
            found: gumbel.len(),
        });
    }
    let mut logits: Vec<f64> = q_row
        .iter()
        .zip(gumbel)
        .map(|(&p, &g)| (p.ln() + g) / tau)
        .collect();
    if logits.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::InvalidArgument("probability vector has no mass".into()));
    }
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// Gumbel-Softmax relaxation of a draw from `q_row`.
pub fn gumbel_softmax_assign(rng: &mut Rng, q_row: &[f64], tau: f64) -> Result<Vec<f64>> {
    let g: Vec<f64> = (0..q_row.len())
        .map(|_| gumbel_from_uniform(rng.uniform()))
        .collect();
    gumbel_softmax_with_noise(q_row, &g, tau)
}

/// Row-wise argmax; ties go to the lowest index.
pub fn hard_assign(q: &ClusterPosterior) -> Vec<usize> {
    q.q.row_iter().map(argmax).collect()
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::DEFAULT_VAR_FLOOR;
    use crate::nn::{mlp_init, Activation};
    use crate::numerics::{finite_diff_grad, relative_error};

    const FLOOR: f64 = DEFAULT_VAR_FLOOR;

    fn random_gmm(rng: &mut Rng, k: usize, j: usize) -> GmmParams {
        let mu = sample_standard_normal(rng, k, j);
        let lv = sample_standard_normal(rng, k, j).scale(0.3);
        let logits = sample_standard_normal(rng, 1, k).into_vec();
        let pi = crate::numerics::softmax(&logits);
        GmmParams::new(&pi, mu, lv, FLOOR).unwrap()
    }

    fn random_enc(rng: &mut Rng, n: usize, j: usize) -> EncoderOutput {
        EncoderOutput::new(
            sample_standard_normal(rng, n, j),
            sample_standard_normal(rng, n, j).scale(0.5),
            FLOOR,
        )
        .unwrap()
    }

    #[test]
    fn encode_zero_weights_returns_bias_heads() {
        let mut enc = mlp_init(&mut Rng::new(1), &[3, 4], Activation::Tanh).unwrap();
        enc.layers[0].weight = Matrix::zeros(4, 3);
        enc.layers[0].bias = vec![0.5, -0.5, 1.0, -100.0];
        let out = encode(&enc, &Matrix::filled(2, 3, 1.0), FLOOR).unwrap();
        for i in 0..2 {
            assert_eq!(out.mu.row(i), &[0.5, -0.5]);
            assert_eq!(out.log_var.row(i), &[1.0, FLOOR.ln()]);
        }
    }

    #[test]
    fn encode_splits_forward_output() {
        let enc = mlp_init(&mut Rng::new(2), &[3, 5, 6], Activation::Tanh).unwrap();
        let x = sample_standard_normal(&mut Rng::new(3), 4, 3);
        let h = enc.predict(&x).unwrap();
        let out = encode(&enc, &x, FLOOR).unwrap();
        assert_eq!(out.mu, h.columns(0..3));
        assert_eq!(out.log_var, h.columns(3..6));
    }

    #[test]
    fn encode_rejects_odd_width() {
        let enc = mlp_init(&mut Rng::new(2), &[3, 5], Activation::Tanh).unwrap();
        assert!(encode(&enc, &Matrix::zeros(1, 3), FLOOR).is_err());
    }

    #[test]
    fn reparameterize_degenerate_variance_returns_mean() {
        let floor = 1e-12;
        let mu = sample_standard_normal(&mut Rng::new(4), 5, 3);
        let enc = EncoderOutput::new(mu.clone(), Matrix::filled(5, 3, -100.0), floor).unwrap();
        let s = reparameterize(&mut Rng::new(5), &enc, 1).unwrap();
        let dist = s[0].z.sub(&mu).unwrap().as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(dist <= 3.0 * floor.sqrt() * (15f64).sqrt() * 2.0);
    }

    #[test]
    fn reparameterize_mean_converges() {
        let enc = EncoderOutput::new(
            Matrix::row_vector(&[1.0, -2.0]),
            Matrix::row_vector(&[0.0, 2f64.ln()]),
            FLOOR,
        )
        .unwrap();
        let mut rng = Rng::new(6);
        let draws = 100_000;
        let mut sums = [0.0; 2];
        for _ in 0..draws {
            let s = reparameterize(&mut rng, &enc, 1).unwrap();
            sums[0] += s[0].z[(0, 0)];
            sums[1] += s[0].z[(0, 1)];
        }
        let sds = [1.0, 2f64.sqrt()];
        for j in 0..2 {
            let mean = sums[j] / draws as f64;
            assert!((mean - enc.mu[(0, j)]).abs() <= 3.0 * sds[j] / (draws as f64).sqrt());
        }
    }

    #[test]
    fn stored_noise_regenerates_sample() {
        let enc = random_enc(&mut Rng::new(7), 4, 3);
        let s = reparameterize(&mut Rng::new(8), &enc, 3).unwrap();
        for sample in &s {
            let again = LatentSample::from_noise(&enc, sample.eps.clone()).unwrap();
            assert_eq!(&again, sample);
        }
        assert!(reparameterize(&mut Rng::new(8), &enc, 0).is_err());
    }

    #[test]
    fn posterior_single_sample_is_responsibilities() {
        let mut rng = Rng::new(9);
        let gmm = random_gmm(&mut rng, 3, 2);
        let enc = random_enc(&mut rng, 5, 2);
        let s = reparameterize(&mut rng, &enc, 1).unwrap();
        let q = cluster_posterior(&gmm, &s).unwrap();
        for i in 0..5 {
            assert_eq!(q.q.row(i), gmm.responsibilities(s[0].z.row(i)).unwrap().as_slice());
        }
    }

    #[test]
    fn posterior_mirrored_samples_are_balanced() {
        let mu = Matrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let gmm = GmmParams::new(&[0.5, 0.5], mu, Matrix::zeros(2, 1), FLOOR).unwrap();
        let enc = EncoderOutput::new(Matrix::zeros(1, 1), Matrix::zeros(1, 1), FLOOR).unwrap();
        let a = LatentSample::from_noise(&enc, Matrix::row_vector(&[0.7])).unwrap();
        let b = LatentSample::from_noise(&enc, Matrix::row_vector(&[-0.7])).unwrap();
        let q = cluster_posterior(&gmm, &[a, b]).unwrap();
        assert!((q.q[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((q.q[(0, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn posterior_is_mean_of_single_sample_posteriors() {
        let mut rng = Rng::new(10);
        let gmm = random_gmm(&mut rng, 3, 2);
        let enc = random_enc(&mut rng, 4, 2);
        let s = reparameterize(&mut rng, &enc, 16).unwrap();
        let q = cluster_posterior(&gmm, &s).unwrap();
        for i in 0..4 {
            let mut mean = [0.0; 3];
            for sample in &s {
                let single = cluster_posterior(&gmm, std::slice::from_ref(sample)).unwrap();
                for c in 0..3 {
                    mean[c] += single.q[(i, c)] / 16.0;
                }
            }
            for c in 0..3 {
                assert!((q.q[(i, c)] - mean[c]).abs() < 1e-14);
            }
            assert!((q.q.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_component_has_no_mixture_terms() {
        let mut rng = Rng::new(11);
        let gmm = random_gmm(&mut rng, 1, 3);
        let enc = random_enc(&mut rng, 6, 3);
        let dec = mlp_init(&mut rng, &[3, 2], Activation::Tanh).unwrap();
        let y = sample_standard_normal(&mut rng, 6, 2);
        let s = reparameterize(&mut rng, &enc, 1).unwrap();
        let q = cluster_posterior(&gmm, &s).unwrap();
        let e = elbo(&dec, &gmm, &y, &enc, &s, &q, 0.5).unwrap();
        assert!(e.log_prior_c.abs() < 1e-15);
        assert!(e.entropy_c.abs() < 1e-15);
    }

    #[test]
    fn matching_single_component_has_zero_kl() {
        let mut rng = Rng::new(12);
        let mu = sample_standard_normal(&mut rng, 1, 3);
        let lv = sample_standard_normal(&mut rng, 1, 3).scale(0.4);
        let gmm = GmmParams::new(&[1.0], mu.clone(), lv.clone(), FLOOR).unwrap();
        let enc = EncoderOutput::new(mu, lv, FLOOR).unwrap();
        let dec = mlp_init(&mut rng, &[3, 2], Activation::Tanh).unwrap();
        let y = Matrix::zeros(1, 2);
        let s = reparameterize(&mut rng, &enc, 1).unwrap();
        let q = cluster_posterior(&gmm, &s).unwrap();
        let e = elbo(&dec, &gmm, &y, &enc, &s, &q, 1.0).unwrap();
        assert!(e.kl().abs() < 1e-12, "kl {}", e.kl());
    }

    #[test]
    fn total_assembles_terms() {
        let mut rng = Rng::new(13);
        let gmm = random_gmm(&mut rng, 3, 2);
        let enc = random_enc(&mut rng, 7, 2);
        let dec = mlp_init(&mut rng, &[2, 4, 3], Activation::Tanh).unwrap();
        let y = sample_standard_normal(&mut rng, 7, 3);
        let s = reparameterize(&mut rng, &enc, 2).unwrap();
        let q = cluster_posterior(&gmm, &s).unwrap();
        let beta = 0.37;
        let e = elbo(&dec, &gmm, &y, &enc, &s, &q, beta).unwrap();
        let expect = e.recon + beta * (e.cross_entropy_zc + e.log_prior_c + e.entropy_z + e.entropy_c);
        assert!((e.total - expect).abs() < 1e-10);
        assert!(e.entropy_c >= 0.0 && e.entropy_c <= 7.0 * 3f64.ln() + 1e-12);
        assert!(e.kl() >= -1e-6);
    }

    #[test]
    fn pretrain_kl_closed_form_examples() {
        let dec = mlp_init(&mut Rng::new(1), &[1, 1], Activation::Tanh).unwrap();
        let y = Matrix::zeros(1, 1);
        let enc = EncoderOutput::new(Matrix::zeros(1, 1), Matrix::zeros(1, 1), FLOOR).unwrap();
        let s = reparameterize(&mut Rng::new(2), &enc, 1).unwrap();
        let e = pretrain_elbo(&dec, &y, &enc, &s, 1.0).unwrap();
        assert!(e.kl().abs() < 1e-15);

        let enc = EncoderOutput::new(Matrix::row_vector(&[1.0]), Matrix::zeros(1, 1), FLOOR).unwrap();
        let e = pretrain_elbo(&dec, &y, &enc, &s, 2.0).unwrap();
        assert!((e.kl() - 0.5).abs() < 1e-15);
        assert!((e.total - (e.recon - 2.0 * 0.5)).abs() < 1e-14);
    }

    #[test]
    fn elbo_rejects_mismatched_posterior() {
        let mut rng = Rng::new(14);
        let gmm = random_gmm(&mut rng, 2, 2);
        let enc = random_enc(&mut rng, 3, 2);
        let dec = mlp_init(&mut rng, &[2, 1], Activation::Tanh).unwrap();
        let s = reparameterize(&mut rng, &enc, 1).unwrap();
        let bad = ClusterPosterior {
            q: Matrix::filled(3, 3, 1.0 / 3.0),
        };
        assert!(elbo(&dec, &gmm, &Matrix::zeros(3, 1), &enc, &s, &bad, 1.0).is_err());
    }

    struct Setup {
        encoder: MlpParams,
        decoder: MlpParams,
        gmm: GmmParams,
        x: Matrix,
        y: Matrix,
        noise: Vec<Matrix>,
    }

    fn small_setup(seed: u64) -> Setup {
        let mut rng = Rng::new(seed);
        let (n, dx, dy, j, k) = (8, 5, 2, 3, 2);
        Setup {
            encoder: mlp_init(&mut rng, &[dx, 6, 2 * j], Activation::Tanh).unwrap(),
            decoder: mlp_init(&mut rng, &[j, 6, dy], Activation::Tanh).unwrap(),
            gmm: random_gmm(&mut rng, k, j),
            x: sample_standard_normal(&mut rng, n, dx),
            y: sample_standard_normal(&mut rng, n, dy),
            noise: vec![sample_standard_normal(&mut rng, n, j)],
        }
    }

    /// Forward-only evaluation of the stop-gradient objective.
    fn frozen_objective(
        encoder: &MlpParams,
        decoder: &MlpParams,
        gmm: &GmmParams,
        s: &Setup,
        q: &ClusterPosterior,
        beta: f64,
    ) -> f64 {
        let enc = encode(encoder, &s.x, FLOOR).unwrap();
        let samples: Vec<_> = s
            .noise
            .iter()
            .map(|e| LatentSample::from_noise(&enc, e.clone()).unwrap())
            .collect();
        elbo(decoder, gmm, &s.y, &enc, &samples, q, beta).unwrap().total
    }

    #[test]
    fn beta_zero_leaves_mixture_untouched() {
        let s = small_setup(20);
        let g = elbo_gradients_with_noise(
            &s.encoder, &s.decoder, &s.gmm, &s.x, &s.y, 0.0, &s.noise, None, FLOOR,
        )
        .unwrap();
        assert!(g.gmm.unwrap().to_flat().iter().all(|&v| v == 0.0));
        // Encoder gradient is then the reconstruction path alone.
        let p = pretrain_gradients_with_noise(&s.encoder, &s.decoder, &s.x, &s.y, 0.0, &s.noise, FLOOR)
            .unwrap();
        for (a, b) in g.encoder.to_flat().iter().zip(p.encoder.to_flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_mean_gradient_is_linear_in_beta() {
        let s = small_setup(21);
        let q = {
            let enc = encode(&s.encoder, &s.x, FLOOR).unwrap();
            let samples: Vec<_> = s
                .noise
                .iter()
                .map(|e| LatentSample::from_noise(&enc, e.clone()).unwrap())
                .collect();
            cluster_posterior(&s.gmm, &samples).unwrap()
        };
        let g1 = elbo_gradients_with_noise(
            &s.encoder, &s.decoder, &s.gmm, &s.x, &s.y, 0.3, &s.noise, Some(&q), FLOOR,
        )
        .unwrap();
        let g2 = elbo_gradients_with_noise(
            &s.encoder, &s.decoder, &s.gmm, &s.x, &s.y, 0.6, &s.noise, Some(&q), FLOOR,
        )
        .unwrap();
        let (a, b) = (g1.gmm.unwrap(), g2.gmm.unwrap());
        for (x, y) in a.mu.as_slice().iter().zip(b.mu.as_slice()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn guided_gradients_match_finite_differences() {
        let s = small_setup(22);
        let beta = 0.7;
        let g = elbo_gradients_with_noise(
            &s.encoder, &s.decoder, &s.gmm, &s.x, &s.y, beta, &s.noise, None, FLOOR,
        )
        .unwrap();
        let q = g.posterior.clone().unwrap();
        let h = 1e-5;

        let mut probe = s.encoder.clone();
        let fd = finite_diff_grad(
            |flat| {
                probe.set_flat(flat).unwrap();
                frozen_objective(&probe, &s.decoder, &s.gmm, &s, &q, beta)
            },
            &s.encoder.to_flat(),
            h,
        )
        .unwrap();
        for (a, n) in g.encoder.to_flat().iter().zip(&fd) {
            assert!(relative_error(*a, *n, 1e-6) < 1e-4, "encoder {a} vs {n}");
        }

        let mut probe = s.decoder.clone();
        let fd = finite_diff_grad(
            |flat| {
                probe.set_flat(flat).unwrap();
                frozen_objective(&s.encoder, &probe, &s.gmm, &s, &q, beta)
            },
            &s.decoder.to_flat(),
            h,
        )
        .unwrap();
        for (a, n) in g.decoder.to_flat().iter().zip(&fd) {
            assert!(relative_error(*a, *n, 1e-6) < 1e-4, "decoder {a} vs {n}");
        }

        let base: Vec<f64> = s.gmm.segments().iter().flat_map(|(_, v)| v.to_vec()).collect();
        let mut probe = s.gmm.clone();
        let fd = finite_diff_grad(
            |flat| {
                let k = probe.k();
                let kj = probe.mu.as_slice().len();
                probe.logits.copy_from_slice(&flat[..k]);
                probe.mu.as_mut_slice().copy_from_slice(&flat[k..k + kj]);
                probe.log_var.as_mut_slice().copy_from_slice(&flat[k + kj..]);
                frozen_objective(&s.encoder, &s.decoder, &probe, &s, &q, beta)
            },
            &base,
            h,
        )
        .unwrap();
        for (a, n) in g.gmm.unwrap().to_flat().iter().zip(&fd) {
            assert!(relative_error(*a, *n, 1e-6) < 1e-4, "gmm {a} vs {n}");
        }
    }

    use crate::nn::ParamSegments;

    #[test]
    fn pretrain_gradients_match_finite_differences() {
        let s = small_setup(23);
        let beta = 0.4;
        let g = pretrain_gradients_with_noise(&s.encoder, &s.decoder, &s.x, &s.y, beta, &s.noise, FLOOR)
            .unwrap();
        let objective = |encoder: &MlpParams, decoder: &MlpParams| {
            let enc = encode(encoder, &s.x, FLOOR).unwrap();
            let samples: Vec<_> = s
                .noise
                .iter()
                .map(|e| LatentSample::from_noise(&enc, e.clone()).unwrap())
                .collect();
            pretrain_elbo(decoder, &s.y, &enc, &samples, beta).unwrap().total
        };
        let mut probe = s.encoder.clone();
        let fd = finite_diff_grad(
            |flat| {
                probe.set_flat(flat).unwrap();
                objective(&probe, &s.decoder)
            },
            &s.encoder.to_flat(),
            1e-5,
        )
        .unwrap();
        for (a, n) in g.encoder.to_flat().iter().zip(&fd) {
            assert!(relative_error(*a, *n, 1e-6) < 1e-4, "encoder {a} vs {n}");
        }
    }

    #[test]
    fn gumbel_softmax_examples() {
        let q = [0.2, 0.5, 0.3];
        let out = gumbel_softmax_with_noise(&q, &[0.0; 3], 1.0).unwrap();
        for (a, b) in out.iter().zip(&q) {
            assert!((a - b).abs() < 1e-15);
        }
        let sharp = gumbel_softmax_with_noise(&q, &[0.0; 3], 0.01).unwrap();
        assert!(sharp[1] > 0.999);
        assert!(gumbel_softmax_with_noise(&q, &[0.0; 3], 0.0).is_err());
        assert!(gumbel_softmax_assign(&mut Rng::new(0), &q, -1.0).is_err());
    }

    #[test]
    fn gumbel_argmax_frequencies_follow_q() {
        let q = [0.1, 0.6, 0.3];
        let mut rng = Rng::new(30);
        let mut counts = [0usize; 3];
        let draws = 100_000;
        for _ in 0..draws {
            let s = gumbel_softmax_assign(&mut rng, &q, 0.5).unwrap();
            counts[argmax(&s)] += 1;
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for c in 0..3 {
            assert!((counts[c] as f64 / draws as f64 - q[c]).abs() < 0.02);
        }
    }

    #[test]
    fn hard_assign_examples() {
        let q = ClusterPosterior {
            q: Matrix::from_rows(&[vec![0.1, 0.7, 0.2], vec![0.5, 0.5, 0.0]]).unwrap(),
        };
        assert_eq!(hard_assign(&q), vec![1, 0]);
    }

    #[test]
    fn hard_assign_is_zero_temperature_gumbel_limit() {
        let mut rng = Rng::new(31);
        let gmm = random_gmm(&mut rng, 4, 2);
        let enc = random_enc(&mut rng, 30, 2);
        let s = reparameterize(&mut rng, &enc, 4).unwrap();
        let q = cluster_posterior(&gmm, &s).unwrap();
        let hard = hard_assign(&q);
        for (i, row) in q.q.row_iter().enumerate() {
            let relaxed = gumbel_softmax_with_noise(row, &[0.0; 4], 1e-4).unwrap();
            assert_eq!(argmax(&relaxed), hard[i]);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use crate::numerics::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn regularizer_is_nonnegative(seed in 0u64..10_000, k in 1usize..5, beta in 0.0f64..2.0) {
                let mut rng = Rng::new(seed);
                let gmm = random_gmm(&mut rng, k, 3);
                let enc = random_enc(&mut rng, 5, 3);
                let dec = mlp_init(&mut rng, &[3, 2], Activation::Tanh).unwrap();
                let y = sample_standard_normal(&mut rng, 5, 2);
                let s = reparameterize(&mut rng, &enc, 2).unwrap();
                let q = cluster_posterior(&gmm, &s).unwrap();
                let e = elbo(&dec, &gmm, &y, &enc, &s, &q, beta).unwrap();
                prop_assert!(e.kl() >= -1e-6);
                for row in q.q.row_iter() {
                    prop_assert!(row.iter().all(|&v| v >= 0.0));
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }

            #[test]
            fn elbo_invariant_under_component_relabeling(seed in 0u64..10_000) {
                let mut rng = Rng::new(seed);
                let gmm = random_gmm(&mut rng, 3, 2);
                let enc = random_enc(&mut rng, 6, 2);
                let dec = mlp_init(&mut rng, &[2, 3, 2], Activation::Tanh).unwrap();
                let y = sample_standard_normal(&mut rng, 6, 2);
                let s = reparameterize(&mut rng, &enc, 1).unwrap();
                let q = cluster_posterior(&gmm, &s).unwrap();
                let perm = [2, 0, 1];
                let gmm_p = gmm.permuted(&perm);
                let q_p = ClusterPosterior { q: q.q.transpose().select_rows(&perm).transpose() };
                let a = elbo(&dec, &gmm, &y, &enc, &s, &q, 0.5).unwrap();
                let b = elbo(&dec, &gmm_p, &y, &enc, &s, &q_p, 0.5).unwrap();
                for (u, v) in [
                    (a.recon, b.recon), (a.cross_entropy_zc, b.cross_entropy_zc),
                    (a.log_prior_c, b.log_prior_c), (a.entropy_z, b.entropy_z),
                    (a.entropy_c, b.entropy_c), (a.total, b.total),
                ] {
                    prop_assert!((u - v).abs() < 1e-10);
                }
            }
        }
    }
}
