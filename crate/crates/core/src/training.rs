//! Two-phase training: clusterless pretraining, a mixture fitted to the
//! pretrained latent means, then guided training of encoder, decoder and
//! mixture with separate Adam states. Also the unguided joint baseline,
//! checkpoints and inference.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ColumnRange, Dataset};
use crate::error::{Error, Result};
use crate::eval::{clustering_accuracy, nmi};
use crate::gmm::{gmm_fit_em, GmmParams, DEFAULT_VAR_FLOOR};
use crate::model::{
    cluster_posterior, elbo, elbo_backward, encode, hard_assign, pretrain_elbo,
    pretrain_gradients_with_noise, reparameterize, draw_noise, ClusterPosterior, ElboBreakdown,
    ElboGradients,
};
use crate::nn::{mlp_init, Activation, AdamState, MlpParams};
use crate::numerics::{streams, Matrix, Rng};

/// How β evolves over the guided-training epochs (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaSchedule {
    Constant,
    /// 0 at `start_epoch`, rising linearly to the full β at `end_epoch`.
    LinearRamp { start_epoch: usize, end_epoch: usize },
}

impl BetaSchedule {
    pub fn beta_at(&self, beta: f64, epoch: usize) -> f64 {
        match *self {
            BetaSchedule::Constant => beta,
            BetaSchedule::LinearRamp {
                start_epoch,
                end_epoch,
            } => {
                if epoch >= end_epoch {
                    beta
                } else if epoch <= start_epoch {
                    0.0
                } else {
                    beta * (epoch - start_epoch) as f64 / (end_epoch - start_epoch) as f64
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Encode `x`, reconstruct `y`.
    Guided,
    /// Encode and reconstruct the concatenation `(x, y)`.
    UnguidedJoint,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "guided" => Ok(Mode::Guided),
            "unguided_joint" => Ok(Mode::UnguidedJoint),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode `{other}` (expected guided or unguided_joint)"
            ))),
        }
    }
}

/// Every training hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of clusters.
    pub k: usize,
    /// Latent dimension.
    pub latent_dim: usize,
    /// Monte-Carlo latent samples per row.
    pub samples: usize,
    pub beta_pretrain: f64,
    pub beta_train: f64,
    pub beta_schedule: BetaSchedule,
    pub lr_net_pretrain: f64,
    pub lr_net: f64,
    pub lr_gmm: f64,
    pub epochs_pretrain: usize,
    pub epochs_train: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
    /// Gumbel-Softmax temperature for stochastic assignment.
    pub tau: f64,
    pub var_floor: f64,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 3,
            latent_dim: 4,
            samples: 1,
            beta_pretrain: 0.001,
            beta_train: 0.01,
            beta_schedule: BetaSchedule::Constant,
            lr_net_pretrain: 5e-4,
            lr_net: 1e-4,
            lr_gmm: 1e-5,
            epochs_pretrain: 5,
            epochs_train: 50,
            batch_size: 4,
            seed: 0,
            encoder_hidden: vec![32],
            decoder_hidden: vec![32],
            activation: Activation::Tanh,
            tau: 0.5,
            var_floor: DEFAULT_VAR_FLOOR,
            mode: Mode::Guided,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1");
        }
        if self.samples == 0 {
            return bad("samples must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs_pretrain == 0 {
            return bad("epochs_pretrain must be at least 1");
        }
        if !(self.beta_pretrain >= 0.0 && self.beta_train >= 0.0)
            || !self.beta_pretrain.is_finite()
            || !self.beta_train.is_finite()
        {
            return bad("beta values must be finite and non-negative");
        }
        for (name, lr) in [
            ("lr_net_pretrain", self.lr_net_pretrain),
            ("lr_net", self.lr_net),
            ("lr_gmm", self.lr_gmm),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.encoder_hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.var_floor > 0.0 && self.var_floor < 1.0) {
            return bad("var_floor must lie in (0, 1)");
        }
        if let BetaSchedule::LinearRamp {
            start_epoch,
            end_epoch,
        } = self.beta_schedule
        {
            if end_epoch <= start_epoch {
                return bad("linear_ramp needs end_epoch > start_epoch");
            }
        }
        Ok(())
    }

    pub fn beta_at(&self, epoch: usize) -> f64 {
        self.beta_schedule.beta_at(self.beta_train, epoch)
    }
}

/// Encoder input and reconstruction target for a dataset under `mode`.
pub fn model_io(dataset: &Dataset, mode: Mode) -> Result<(Matrix, Matrix)> {
    match mode {
        Mode::Guided => Ok((dataset.x.clone(), dataset.y.clone())),
        Mode::UnguidedJoint => {
            let joint = dataset.x.hstack(&dataset.y)?;
            Ok((joint.clone(), joint))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Train,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Train => "train",
        }
    }
}

/// One record per epoch. ELBO fields are per-row means: the training values
/// average the mini-batch evaluations of the epoch, the validation values are
/// computed once with the end-of-epoch parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    pub train: ElboBreakdown,
    pub val: ElboBreakdown,
    pub beta_effective: f64,
    /// Hard-assignment counts per cluster on the validation split. The
    /// pretraining prior has a single component.
    pub occupancy: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nmi: Option<f64>,
}

/// What a caller sees after each epoch.
pub struct EpochView<'a> {
    pub metrics: &'a EpochMetrics,
    /// Validation latent means with the end-of-epoch encoder.
    pub val_latent: &'a Matrix,
    /// Validation hard assignments (all zero during pretraining).
    pub val_assignments: &'a [usize],
}

/// Receives each epoch as it completes.
pub trait Observer {
    fn on_epoch(&mut self, view: &EpochView<'_>) -> Result<()>;

    fn on_warning(&mut self, _message: &str) {}
}

/// Discards everything.
pub struct NoObserver;

impl Observer for NoObserver {
    fn on_epoch(&mut self, _view: &EpochView<'_>) -> Result<()> {
        Ok(())
    }
}

/// Column names and normalization ranges of the training data, needed to
/// prepare new inputs for inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSchema {
    pub feature_names: Vec<String>,
    pub guide_names: Vec<String>,
    pub x_ranges: Vec<ColumnRange>,
    pub y_ranges: Vec<ColumnRange>,
}

impl DataSchema {
    pub fn of(dataset: &Dataset) -> Self {
        DataSchema {
            feature_names: dataset.feature_names.clone(),
            guide_names: dataset.guide_names.clone(),
            x_ranges: dataset.x_ranges.clone(),
            y_ranges: dataset.y_ranges.clone(),
        }
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub gmm: GmmParams,
    /// Last completed guided-training epoch.
    pub epoch: usize,
    /// Latent-noise generator state after the last step.
    pub rng_state: Rng,
    pub schema: DataSchema,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        #[derive(Deserialize)]
        struct Version {
            version: u32,
        }
        let v: Version = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })?;
        if v.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                expected: CHECKPOINT_VERSION,
                found: v.version,
            });
        }
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })
    }
}

/// Result of a full training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
    pub warnings: Vec<String>,
}

/// Output of [`infer`].
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub posterior: ClusterPosterior,
    pub assignments: Vec<usize>,
    /// Latent means `μ̃`, one row per input row.
    pub latent: Matrix,
}

fn per_row(b: &ElboBreakdown, n: usize) -> ElboBreakdown {
    let s = 1.0 / n.max(1) as f64;
    ElboBreakdown {
        recon: b.recon * s,
        cross_entropy_zc: b.cross_entropy_zc * s,
        log_prior_c: b.log_prior_c * s,
        entropy_z: b.entropy_z * s,
        entropy_c: b.entropy_c * s,
        beta: b.beta,
        total: b.total * s,
    }
}

fn label_scores(labels: Option<&Vec<usize>>, assignments: &[usize]) -> Result<(Option<f64>, Option<f64>)> {
    match labels {
        Some(l) if !l.is_empty() => Ok((
            Some(clustering_accuracy(assignments, l)?),
            Some(nmi(assignments, l)?),
        )),
        _ => Ok((None, None)),
    }
}

/// Generator used for every evaluation pass, so that repeated evaluations of
/// the same parameters on the same rows agree.
fn eval_rng(seed: u64) -> Rng {
    Rng::new(seed).derive(streams::EVAL)
}

fn shuffle_rng(seed: u64, phase: Phase, epoch: usize) -> Rng {
    let offset = match phase {
        Phase::Pretrain => 0,
        Phase::Train => 1,
    };
    Rng::new(seed).derive(streams::SHUFFLE_BASE + 2 * epoch as u64 + offset)
}

fn batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn check_pair(input: &Matrix, target: &Matrix) -> Result<()> {
    if input.rows() != target.rows() {
        return Err(Error::DimensionMismatch {
            context: "input vs target rows",
            expected: input.rows(),
            found: target.rows(),
        });
    }
    if input.rows() == 0 {
        return Err(Error::NotEnoughData("empty training split".into()));
    }
    Ok(())
}

fn abort_on_numeric(e: Error, phase: Phase, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFiniteTerm { .. } | Error::GradientOverflow { .. } | Error::NonFiniteEvaluation { .. } => {
            Error::NonFiniteLoss {
                phase: phase.name(),
                epoch,
                batch,
            }
        }
        other => other,
    }
}

/// Networks produced by pretraining.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub metrics: Vec<EpochMetrics>,
}

/// Maximizes the clusterless objective with a standard-normal prior.
pub fn pretrain(
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    observer: &mut dyn Observer,
) -> Result<Pretrained> {
    config.validate()?;
    let (x, y) = model_io(train, config.mode)?;
    let (vx, vy) = model_io(val, config.mode)?;
    check_pair(&x, &y)?;
    let root = Rng::new(config.seed);
    let j = config.latent_dim;
    let enc_sizes: Vec<usize> = std::iter::once(x.cols())
        .chain(config.encoder_hidden.iter().copied())
        .chain(std::iter::once(2 * j))
        .collect();
    let dec_sizes: Vec<usize> = std::iter::once(j)
        .chain(config.decoder_hidden.iter().copied())
        .chain(std::iter::once(y.cols()))
        .collect();
    let mut encoder = mlp_init(&mut root.derive(streams::INIT_ENCODER), &enc_sizes, config.activation)?;
    let mut decoder = mlp_init(&mut root.derive(streams::INIT_DECODER), &dec_sizes, config.activation)?;
    let mut adam_enc = AdamState::new(config.lr_net_pretrain);
    let mut adam_dec = AdamState::new(config.lr_net_pretrain);
    let mut noise_rng = root.derive(streams::PRETRAIN_NOISE);
    let beta = config.beta_pretrain;
    let mut metrics = Vec::with_capacity(config.epochs_pretrain);

    for epoch in 1..=config.epochs_pretrain {
        let mut train_sum = ElboBreakdown::default();
        for (b, idx) in batches(x.rows(), config.batch_size, &mut shuffle_rng(config.seed, Phase::Pretrain, epoch))
            .into_iter()
            .enumerate()
        {
            let bx = x.select_rows(&idx);
            let by = y.select_rows(&idx);
            let mut step = || -> Result<ElboGradients> {
                let enc = encode(&encoder, &bx, config.var_floor)?;
                let noise = draw_noise(&mut noise_rng, &enc, config.samples);
                let mut g = pretrain_gradients_with_noise(&encoder, &decoder, &bx, &by, beta, &noise, config.var_floor)?;
                g.negate();
                Ok(g)
            };
            let g = step().map_err(|e| abort_on_numeric(e, Phase::Pretrain, epoch, b))?;
            train_sum.accumulate(&g.breakdown);
            adam_enc
                .step(&mut encoder, &g.encoder)
                .and_then(|_| adam_dec.step(&mut decoder, &g.decoder))
                .map_err(|e| abort_on_numeric(e, Phase::Pretrain, epoch, b))?;
        }
        let mut rng = eval_rng(config.seed);
        let enc = encode(&encoder, &vx, config.var_floor)?;
        let samples = reparameterize(&mut rng, &enc, config.samples)?;
        let val_elbo = pretrain_elbo(&decoder, &vy, &enc, &samples, beta)
            .map_err(|e| abort_on_numeric(e, Phase::Pretrain, epoch, 0))?;
        let assignments = vec![0; vx.rows()];
        let m = EpochMetrics {
            epoch,
            phase: Phase::Pretrain,
            train: per_row(&train_sum, x.rows()),
            val: per_row(&val_elbo, vx.rows()),
            beta_effective: beta,
            occupancy: vec![vx.rows()],
            acc: None,
            nmi: None,
        };
        observer.on_epoch(&EpochView {
            metrics: &m,
            val_latent: &enc.mu,
            val_assignments: &assignments,
        })?;
        metrics.push(m);
    }
    Ok(Pretrained {
        encoder,
        decoder,
        metrics,
    })
}

pub const EM_MAX_ITERS: usize = 200;
pub const EM_TOL: f64 = 1e-8;
/// Independent k-means++ seedings tried by [`init_gmm_from_latent`].
pub const EM_RESTARTS: usize = 5;

/// Fits the mixture prior to the latent means of `input` by EM, keeping the
/// restart with the highest final log-likelihood. Needs more rows than
/// components.
pub fn init_gmm_from_latent(
    encoder: &MlpParams,
    input: &Matrix,
    k: usize,
    seed: u64,
    var_floor: f64,
) -> Result<GmmParams> {
    if input.rows() <= k {
        return Err(Error::NotEnoughData(format!(
            "mixture initialization needs more than K = {k} rows, got {}",
            input.rows()
        )));
    }
    let enc = encode(encoder, input, var_floor)?;
    let mut rng = Rng::new(seed).derive(streams::GMM_INIT);
    let mut best: Option<(f64, GmmParams)> = None;
    for _ in 0..EM_RESTARTS {
        let fit = gmm_fit_em(&mut rng, &enc.mu, k, EM_MAX_ITERS, EM_TOL, var_floor)?;
        let ll = fit.log_likelihood.last().copied().unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((ll, fit.params));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Frozen-parameter evaluation of the guided objective on a split.
struct Evaluation {
    elbo: ElboBreakdown,
    latent: Matrix,
    assignments: Vec<usize>,
}

fn evaluate(
    config: &TrainConfig,
    encoder: &MlpParams,
    decoder: &MlpParams,
    gmm: &GmmParams,
    input: &Matrix,
    target: &Matrix,
    beta: f64,
) -> Result<Evaluation> {
    let mut rng = eval_rng(config.seed);
    let enc = encode(encoder, input, config.var_floor)?;
    let samples = reparameterize(&mut rng, &enc, config.samples)?;
    let q = cluster_posterior(gmm, &samples)?;
    let elbo = elbo(decoder, gmm, target, &enc, &samples, &q, beta)?;
    Ok(Evaluation {
        elbo,
        assignments: hard_assign(&q),
        latent: enc.mu,
    })
}

/// Consecutive epochs with a near-empty cluster before a warning.
pub const EMPTY_CLUSTER_PATIENCE: usize = 5;
/// Occupancy share of the validation split below which a cluster counts as
/// near-empty.
pub const EMPTY_CLUSTER_SHARE: f64 = 0.01;

/// Guided training of all components from the given initialization.
#[allow(clippy::too_many_arguments)]
pub fn train(
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    mut encoder: MlpParams,
    mut decoder: MlpParams,
    mut gmm: GmmParams,
    observer: &mut dyn Observer,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (x, y) = model_io(train, config.mode)?;
    let (vx, vy) = model_io(val, config.mode)?;
    check_pair(&x, &y)?;
    if gmm.k() != config.k || gmm.dim() != config.latent_dim {
        return Err(Error::DimensionMismatch {
            context: "mixture components",
            expected: config.k,
            found: gmm.k(),
        });
    }
    let mut adam_enc = AdamState::new(config.lr_net);
    let mut adam_dec = AdamState::new(config.lr_net);
    let mut adam_gmm = AdamState::new(config.lr_gmm);
    let mut noise_rng = Rng::new(config.seed).derive(streams::TRAIN_NOISE);
    let mut metrics = Vec::with_capacity(config.epochs_train);
    let mut warnings = Vec::new();
    let mut sparse_streak = 0usize;

    for epoch in 1..=config.epochs_train {
        let beta = config.beta_at(epoch);
        let mut train_sum = ElboBreakdown::default();
        for (b, idx) in batches(x.rows(), config.batch_size, &mut shuffle_rng(config.seed, Phase::Train, epoch))
            .into_iter()
            .enumerate()
        {
            let bx = x.select_rows(&idx);
            let by = y.select_rows(&idx);
            let mut g = elbo_backward(
                &encoder,
                &decoder,
                &gmm,
                &bx,
                &by,
                beta,
                config.samples,
                config.var_floor,
                &mut noise_rng,
            )
            .map_err(|e| abort_on_numeric(e, Phase::Train, epoch, b))?;
            g.negate();
            train_sum.accumulate(&g.breakdown);
            let gmm_grads = g.gmm.as_ref().expect("guided gradients carry mixture terms");
            adam_enc
                .step(&mut encoder, &g.encoder)
                .and_then(|_| adam_dec.step(&mut decoder, &g.decoder))
                .and_then(|_| adam_gmm.step(&mut gmm, gmm_grads))
                .map_err(|e| abort_on_numeric(e, Phase::Train, epoch, b))?;
            gmm.enforce_floor();
        }
        let ev = evaluate(config, &encoder, &decoder, &gmm, &vx, &vy, beta)
            .map_err(|e| abort_on_numeric(e, Phase::Train, epoch, 0))?;
        let mut occupancy = vec![0usize; config.k];
        for &a in &ev.assignments {
            occupancy[a] += 1;
        }
        let (acc, nmi) = label_scores(val.labels.as_ref(), &ev.assignments)?;
        let m = EpochMetrics {
            epoch,
            phase: Phase::Train,
            train: per_row(&train_sum, x.rows()),
            val: per_row(&ev.elbo, vx.rows()),
            beta_effective: beta,
            occupancy,
            acc,
            nmi,
        };
        let threshold = EMPTY_CLUSTER_SHARE * vx.rows() as f64;
        if m.occupancy.iter().any(|&c| (c as f64) < threshold) {
            sparse_streak += 1;
            if sparse_streak == EMPTY_CLUSTER_PATIENCE {
                let msg = format!(
                    "epoch {epoch}: a cluster has held under {:.0}% of the validation rows for {EMPTY_CLUSTER_PATIENCE} epochs (occupancy {:?})",
                    EMPTY_CLUSTER_SHARE * 100.0,
                    m.occupancy
                );
                observer.on_warning(&msg);
                warnings.push(msg);
            }
        } else {
            sparse_streak = 0;
        }
        observer.on_epoch(&EpochView {
            metrics: &m,
            val_latent: &ev.latent,
            val_assignments: &ev.assignments,
        })?;
        metrics.push(m);
    }
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        encoder,
        decoder,
        gmm,
        epoch: config.epochs_train,
        rng_state: noise_rng,
        schema: DataSchema::of(train),
    };
    Ok(TrainOutcome {
        checkpoint,
        metrics,
        warnings,
    })
}

/// Pretraining, mixture initialization and guided training in sequence.
/// The returned metrics cover both phases.
pub fn run(config: &TrainConfig, train_set: &Dataset, val: &Dataset, observer: &mut dyn Observer) -> Result<TrainOutcome> {
    let pre = pretrain(config, train_set, val, observer)?;
    let (input, _) = model_io(train_set, config.mode)?;
    let gmm = init_gmm_from_latent(&pre.encoder, &input, config.k, config.seed, config.var_floor)?;
    let mut outcome = train(config, train_set, val, pre.encoder, pre.decoder, gmm, observer)?;
    let mut metrics = pre.metrics;
    metrics.append(&mut outcome.metrics);
    outcome.metrics = metrics;
    Ok(outcome)
}

/// The unguided baseline: the same pipeline with `(x, y)` as both input
/// and reconstruction target.
pub fn run_unguided_baseline(
    config: &TrainConfig,
    train_set: &Dataset,
    val: &Dataset,
    observer: &mut dyn Observer,
) -> Result<TrainOutcome> {
    if config.mode != Mode::UnguidedJoint {
        return Err(Error::InvalidArgument(
            "the unguided baseline requires mode = unguided_joint".into(),
        ));
    }
    run(config, train_set, val, observer)
}

/// Cluster posterior, hard assignments and latent means for new inputs.
/// `input` holds normalized features, or features followed by guides for an
/// unguided checkpoint.
pub fn infer(checkpoint: &Checkpoint, input: &Matrix) -> Result<Inference> {
    let expected = checkpoint.encoder.in_dim();
    if input.cols() != expected {
        return Err(Error::DimensionMismatch {
            context: "inference input columns",
            expected,
            found: input.cols(),
        });
    }
    let config = &checkpoint.config;
    let mut rng = eval_rng(config.seed);
    let enc = encode(&checkpoint.encoder, input, config.var_floor)?;
    let samples = reparameterize(&mut rng, &enc, config.samples)?;
    let posterior = cluster_posterior(&checkpoint.gmm, &samples)?;
    Ok(Inference {
        assignments: hard_assign(&posterior),
        posterior,
        latent: enc.mu,
    })
}
