//! Multilayer perceptrons with hand-written backward passes, and Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sample_standard_normal, Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative in terms of the pre-activation. relu'(0) = 0.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Gradient accumulators, shape-congruent with an [`MlpParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Intermediate values from [`MlpParams::forward`] needed by the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

/// Glorot-normal weights, zero biases. Hidden layers use `activation`, the
/// output layer is always the identity.
pub fn mlp_init(rng: &mut Rng, layer_sizes: &[usize], activation: Activation) -> Result<MlpParams> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "an MLP needs at least 2 layer sizes, got {}",
            layer_sizes.len()
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidArgument("layer sizes must be >= 1".into()));
    }
    let n_layers = layer_sizes.len() - 1;
    let layers = layer_sizes
        .windows(2)
        .enumerate()
        .map(|(k, pair)| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let weight = sample_standard_normal(rng, fan_out, fan_in).scale(std);
            Layer {
                weight,
                bias: vec![0.0; fan_out],
                activation: if k + 1 == n_layers {
                    Activation::Identity
                } else {
                    activation
                },
            }
        })
        .collect();
    Ok(MlpParams { layers })
}

impl MlpParams {
    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.in_dim()];
        sizes.extend(self.layers.iter().map(Layer::out_dim));
        sizes
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        if x.cols() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp forward input",
                expected: self.in_dim(),
                found: x.cols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let mut pre = h.matmul_t(&layer.weight)?;
            pre.add_row_broadcast(&layer.bias)?;
            let out = pre.map(|v| layer.activation.apply(v));
            inputs.push(h);
            pre_activations.push(pre);
            h = out;
        }
        Ok((
            h,
            MlpCache {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp forward input",
                expected: self.in_dim(),
                found: x.cols(),
            });
        }
        let mut h = x.clone();
        for layer in &self.layers {
            let mut pre = h.matmul_t(&layer.weight)?;
            pre.add_row_broadcast(&layer.bias)?;
            h = pre.map(|v| layer.activation.apply(v));
        }
        Ok(h)
    }

    /// Reverse-mode gradients given the upstream gradient `dy` of the output.
    pub fn backward(&self, cache: &MlpCache, dy: &Matrix) -> Result<(Matrix, MlpGrads)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                context: "mlp backward cache depth",
                expected: self.layers.len(),
                found: cache.inputs.len(),
            });
        }
        for (layer, (input, pre)) in self
            .layers
            .iter()
            .zip(cache.inputs.iter().zip(&cache.pre_activations))
        {
            if input.cols() != layer.in_dim() || pre.cols() != layer.out_dim() {
                return Err(Error::DimensionMismatch {
                    context: "mlp backward cache layer",
                    expected: layer.out_dim(),
                    found: pre.cols(),
                });
            }
        }
        let last = cache.pre_activations.last().expect("at least one layer");
        if dy.shape() != last.shape() {
            return Err(Error::DimensionMismatch {
                context: "mlp backward upstream gradient",
                expected: last.rows() * last.cols(),
                found: dy.rows() * dy.cols(),
            });
        }

        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        let mut grad = dy.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre_activations[k];
            let act = layer.activation;
            let dpre = grad.zip_map(pre, |g, p| g * act.derivative(p))?;
            weights.push(dpre.t_matmul(&cache.inputs[k])?);
            biases.push(dpre.column_sums());
            grad = dpre.matmul(&layer.weight)?;
        }
        weights.reverse();
        biases.reverse();
        Ok((grad, MlpGrads { weights, biases }))
    }

    /// All parameters flattened layer by layer (weights then bias).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                context: "MlpParams::set_flat",
                expected: self.num_params(),
                found: flat.len(),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let w = layer.weight.as_mut_slice();
            w.copy_from_slice(&flat[offset..offset + w.len()]);
            offset += w.len();
            let b = layer.bias.as_mut_slice();
            b.copy_from_slice(&flat[offset..offset + b.len()]);
            offset += b.len();
        }
        Ok(())
    }
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            weights: params
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: params.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) -> Result<()> {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            w.add_assign(o)?;
        }
        for (b, o) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in b.iter_mut().zip(o) {
                *x += y;
            }
        }
        Ok(())
    }
}

/// A set of trainable scalars exposed as named contiguous segments, in a
/// fixed order. Gradients expose the same segments in the same order.
pub trait ParamSegments {
    fn segments(&self) -> Vec<(String, &[f64])>;
    fn segments_mut(&mut self) -> Vec<(String, &mut [f64])>;
}

impl ParamSegments for MlpParams {
    fn segments(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            out.push((format!("layer {k} weight"), l.weight.as_slice()));
            out.push((format!("layer {k} bias"), l.bias.as_slice()));
        }
        out
    }

    fn segments_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (k, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer {k} weight"), l.weight.as_mut_slice()));
            out.push((format!("layer {k} bias"), l.bias.as_mut_slice()));
        }
        out
    }
}

impl ParamSegments for MlpGrads {
    fn segments(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((format!("layer {k} weight"), w.as_slice()));
            out.push((format!("layer {k} bias"), b.as_slice()));
        }
        out
    }

    fn segments_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (k, (w, b)) in self.weights.iter_mut().zip(&mut self.biases).enumerate() {
            out.push((format!("layer {k} weight"), w.as_mut_slice()));
            out.push((format!("layer {k} bias"), b.as_mut_slice()));
        }
        out
    }
}

/// Adam with bias correction. Minimizes: parameters move against the gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn first_moments(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moments(&self) -> &[f64] {
        &self.v
    }

    pub fn step<P, G>(&mut self, params: &mut P, grads: &G) -> Result<()>
    where
        P: ParamSegments + ?Sized,
        G: ParamSegments + ?Sized,
    {
        let grad_segments = grads.segments();
        let mut param_segments = params.segments_mut();
        if grad_segments.len() != param_segments.len() {
            return Err(Error::DimensionMismatch {
                context: "adam segments",
                expected: param_segments.len(),
                found: grad_segments.len(),
            });
        }
        let mut total = 0;
        for ((name, p), (_, g)) in param_segments.iter().zip(&grad_segments) {
            if p.len() != g.len() {
                return Err(Error::DimensionMismatch {
                    context: "adam segment length",
                    expected: p.len(),
                    found: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::GradientOverflow {
                    layer: name.clone(),
                });
            }
            total += p.len();
        }
        if self.m.is_empty() {
            self.m = vec![0.0; total];
            self.v = vec![0.0; total];
        } else if self.m.len() != total {
            return Err(Error::DimensionMismatch {
                context: "adam state size",
                expected: self.m.len(),
                found: total,
            });
        }

        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut offset = 0;
        for ((_, p), (_, g)) in param_segments.iter_mut().zip(&grad_segments) {
            for (j, (p, &g)) in p.iter_mut().zip(g.iter()).enumerate() {
                let m = &mut self.m[offset + j];
                let v = &mut self.v[offset + j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            offset += p.len();
        }
        Ok(())
    }
}

/// Flat parameter vector, handy for tests and toy objectives.
impl ParamSegments for Vec<f64> {
    fn segments(&self) -> Vec<(String, &[f64])> {
        vec![("params".to_string(), self.as_slice())]
    }

    fn segments_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![("params".to_string(), self.as_mut_slice())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error};

    fn random_input(seed: u64, n: usize, d: usize) -> Matrix {
        sample_standard_normal(&mut Rng::new(seed), n, d)
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let a = mlp_init(&mut Rng::new(1), &[3, 3], Activation::Tanh).unwrap();
        let b = mlp_init(&mut Rng::new(1), &[3, 3], Activation::Tanh).unwrap();
        assert_eq!(a, b);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
        assert_eq!(a.layers[0].activation, Activation::Identity);
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(mlp_init(&mut Rng::new(1), &[], Activation::Tanh).is_err());
        assert!(mlp_init(&mut Rng::new(1), &[4], Activation::Tanh).is_err());
        assert!(mlp_init(&mut Rng::new(1), &[4, 0, 2], Activation::Tanh).is_err());
    }

    #[test]
    fn init_variance_is_glorot() {
        let p = mlp_init(&mut Rng::new(8), &[512, 512], Activation::Tanh).unwrap();
        let w = p.layers[0].weight.as_slice();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 2.0 / 1024.0;
        assert!((var - target).abs() <= 0.1 * target, "var {var}");
    }

    #[test]
    fn zero_weights_output_biases() {
        let mut p = mlp_init(&mut Rng::new(2), &[4, 5, 3], Activation::Tanh).unwrap();
        for l in &mut p.layers {
            l.weight = Matrix::zeros(l.out_dim(), l.in_dim());
        }
        p.layers[1].bias = vec![0.5, -1.0, 2.0];
        let y = p.predict(&random_input(3, 6, 4)).unwrap();
        for row in y.row_iter() {
            assert_eq!(row, &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn single_identity_layer_is_affine() {
        let mut p = mlp_init(&mut Rng::new(3), &[3, 2], Activation::Identity).unwrap();
        p.layers[0].bias = vec![1.0, -2.0];
        let x = random_input(4, 5, 3);
        let y = p.predict(&x).unwrap();
        let w = &p.layers[0].weight;
        for i in 0..5 {
            for o in 0..2 {
                let direct: f64 = (0..3).map(|k| w[(o, k)] * x[(i, k)]).sum::<f64>() + p.layers[0].bias[o];
                assert!((y[(i, o)] - direct).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn two_layer_tanh_matches_scalar_evaluation() {
        let p = mlp_init(&mut Rng::new(5), &[3, 4, 2], Activation::Tanh).unwrap();
        let x = random_input(6, 7, 3);
        let y = p.predict(&x).unwrap();
        // Oracle: scalar loops, no matrix helpers.
        for i in 0..7 {
            let xi = x.row(i);
            let mut h = [0.0; 4];
            for (u, hu) in h.iter_mut().enumerate() {
                let mut s = p.layers[0].bias[u];
                for k in 0..3 {
                    s += p.layers[0].weight[(u, k)] * xi[k];
                }
                *hu = s.tanh();
            }
            for o in 0..2 {
                let mut s = p.layers[1].bias[o];
                for (u, hu) in h.iter().enumerate() {
                    s += p.layers[1].weight[(o, u)] * hu;
                }
                assert!((y[(i, o)] - s).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = mlp_init(&mut Rng::new(5), &[3, 2], Activation::Tanh).unwrap();
        assert!(p.forward(&Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn backward_rejects_mismatched_cache_and_upstream() {
        let p = mlp_init(&mut Rng::new(5), &[3, 4, 2], Activation::Tanh).unwrap();
        let other = mlp_init(&mut Rng::new(5), &[3, 2], Activation::Tanh).unwrap();
        let x = random_input(1, 4, 3);
        let (_, cache) = other.forward(&x).unwrap();
        assert!(p.backward(&cache, &Matrix::zeros(4, 2)).is_err());
        let (_, cache) = p.forward(&x).unwrap();
        assert!(p.backward(&cache, &Matrix::zeros(4, 3)).is_err());
    }

    /// Sum-of-outputs gradient against central differences across depths and
    /// activations.
    #[test]
    fn backward_matches_finite_differences() {
        for depth in 1..=3usize {
            for act in [Activation::Tanh, Activation::Relu, Activation::Identity] {
                let mut sizes = vec![3];
                sizes.extend(std::iter::repeat(4).take(depth - 1));
                sizes.push(2);
                let seed = 100 + depth as u64;
                let p = mlp_init(&mut Rng::new(seed), &sizes, act).unwrap();
                let x = random_input(seed + 1, 5, 3);
                let (y, cache) = p.forward(&x).unwrap();
                // Keep relu away from kinks.
                if act == Activation::Relu
                    && cache
                        .pre_activations
                        .iter()
                        .any(|m| m.as_slice().iter().any(|v| v.abs() < 1e-3))
                {
                    continue;
                }
                let (_, grads) = p.backward(&cache, &Matrix::filled(y.rows(), y.cols(), 1.0)).unwrap();
                let analytic = grads.to_flat();
                let mut probe = p.clone();
                let numeric = finite_diff_grad(
                    |flat| {
                        probe.set_flat(flat).unwrap();
                        probe.predict(&x).unwrap().sum()
                    },
                    &p.to_flat(),
                    1e-5,
                )
                .unwrap();
                for (a, n) in analytic.iter().zip(&numeric) {
                    assert!(
                        relative_error(*a, *n, 1e-6) < 1e-4,
                        "depth {depth} {act:?}: analytic {a} numeric {n}"
                    );
                }
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let p = mlp_init(&mut Rng::new(9), &[3, 5, 2], Activation::Tanh).unwrap();
        let x = random_input(10, 4, 3);
        let (y, cache) = p.forward(&x).unwrap();
        let (dx, _) = p.backward(&cache, &Matrix::filled(y.rows(), y.cols(), 1.0)).unwrap();
        let numeric = finite_diff_grad(
            |flat| p.predict(&Matrix::new(4, 3, flat.to_vec()).unwrap()).unwrap().sum(),
            x.as_slice(),
            1e-5,
        )
        .unwrap();
        for (a, n) in dx.as_slice().iter().zip(&numeric) {
            assert!(relative_error(*a, *n, 1e-6) < 1e-4);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads_and_backward_is_linear() {
        let p = mlp_init(&mut Rng::new(11), &[3, 4, 2], Activation::Tanh).unwrap();
        let x = random_input(12, 6, 3);
        let (y, cache) = p.forward(&x).unwrap();
        let (dx, g) = p.backward(&cache, &Matrix::zeros(y.rows(), y.cols())).unwrap();
        assert!(dx.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.to_flat().iter().all(|&v| v == 0.0));

        let dy = random_input(13, 6, 2);
        let (dx1, g1) = p.backward(&cache, &dy).unwrap();
        let (dx2, g2) = p.backward(&cache, &dy.scale(2.0)).unwrap();
        for (a, b) in g1.to_flat().iter().zip(g2.to_flat()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        for (a, b) in dx1.as_slice().iter().zip(dx2.as_slice()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr_against_sign() {
        let mut p = vec![1.0, -2.0, 0.5, 3.0];
        let g = vec![0.3, -4.0, 1e-3, -1e3];
        let mut adam = AdamState::new(0.01);
        adam.step(&mut p, &g).unwrap();
        assert_eq!(adam.t, 1);
        let start = [1.0, -2.0, 0.5, 3.0];
        for ((after, before), grad) in p.iter().zip(start).zip(&g) {
            let delta = after - before;
            assert!((delta + 0.01 * grad.signum()).abs() < 1e-6, "delta {delta}");
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = vec![1.0, 2.0];
        let mut adam = AdamState::new(0.1);
        adam.step(&mut p, &vec![0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut params = mlp_init(&mut Rng::new(1), &[2, 3, 1], Activation::Tanh).unwrap();
        let mut grads = MlpGrads::zeros_like(&params);
        grads.biases[1][0] = f64::INFINITY;
        let err = AdamState::new(0.1).step(&mut params, &grads).unwrap_err();
        match err {
            Error::GradientOverflow { layer } => assert_eq!(layer, "layer 1 bias"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        let mut p = vec![1.0, 1.0];
        let mut adam = AdamState::new(0.1);
        for _ in 0..200 {
            let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
            adam.step(&mut p, &g).unwrap();
        }
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-2, "norm {norm}");
        assert!(adam.first_moments().iter().all(|v| v.is_finite()));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            /// At t = 1 the update is -lr * sign(g) up to eps.
            #[test]
            fn first_step_depends_only_on_sign(
                g in prop::collection::vec(prop_oneof![-1e3f64..-1e-2, 1e-2f64..1e3], 1..16),
                lr in 1e-4f64..1.0,
            ) {
                let mut p = vec![0.0; g.len()];
                let mut adam = AdamState::new(lr);
                adam.step(&mut p, &g).unwrap();
                for (x, gi) in p.iter().zip(&g) {
                    prop_assert!((x + lr * gi.signum()).abs() <= lr * 1e-5);
                }
            }
        }
    }
}
