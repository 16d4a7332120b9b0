//! Minimal dense network engine: two-hidden-layer MLPs with tanh hidden
//! activations and identity outputs, hand-rolled backpropagation, Adam,
//! Glorot-uniform initialization, and closed-form FLOPs counting.
//!
//! Gradient convention: [`MlpNet::backward_batch`] returns gradients summed
//! over the batch. Callers that optimize a mean loss fold the `1/batch`
//! factor into the per-sample output gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::{Error, Result};

/// Magic header identifying the on-disk parameter format.
pub const NET_FORMAT_MAGIC: &str = "ASYMRL-NET-1";

/// A four-layer-size MLP (input, hidden, hidden, output) with two hidden
/// tanh layers of equal width and an identity output layer. Heads apply
/// their own transforms on top of the raw output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpNet<S> {
    layer_sizes: [usize; 4],
    /// One `(n_out, n_in)` matrix per affine layer.
    weights: Vec<Array2<S>>,
    biases: Vec<Array1<S>>,
}

/// Activations retained by [`MlpNet::forward_batch`] for the backward pass.
///
/// Holding the cache is the proof that a forward pass happened; `backward_batch`
/// cannot be called without one.
pub struct ForwardCache<S> {
    inputs: Array2<S>,
    hidden1: Array2<S>,
    hidden2: Array2<S>,
}

/// Per-parameter gradients with the same shapes as [`MlpNet`] parameters.
#[derive(Clone, Debug)]
pub struct GradBuffer<S> {
    pub weights: Vec<Array2<S>>,
    pub biases: Vec<Array1<S>>,
}

impl<S: Scalar> MlpNet<S> {
    /// All-zero parameters. Panics when widths are invalid or the two hidden
    /// layers differ.
    pub fn zeros(layer_sizes: [usize; 4]) -> Self {
        assert!(
            layer_sizes.iter().all(|&n| n > 0),
            "layer sizes must be positive, got {layer_sizes:?}"
        );
        assert_eq!(
            layer_sizes[1], layer_sizes[2],
            "hidden layers must have equal width, got {layer_sizes:?}"
        );
        let weights = (0..3)
            .map(|i| Array2::zeros((layer_sizes[i + 1], layer_sizes[i])))
            .collect();
        let biases = (0..3).map(|i| Array1::zeros(layer_sizes[i + 1])).collect();
        Self {
            layer_sizes,
            weights,
            biases,
        }
    }

    /// Glorot-uniform weights (`±sqrt(6/(n_in+n_out))`), zero biases.
    /// Deterministic for a given RNG state.
    pub fn glorot(layer_sizes: [usize; 4], rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(layer_sizes);
        for w in &mut net.weights {
            let (n_out, n_in) = w.dim();
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            for x in w.iter_mut() {
                *x = S::from_f64(rng.random_range(-limit..=limit));
            }
        }
        net
    }

    pub fn layer_sizes(&self) -> [usize; 4] {
        self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layer_sizes[3]
    }

    /// Single-sample forward pass without caching.
    pub fn forward(&self, input: &[S]) -> Array1<S> {
        assert_eq!(
            input.len(),
            self.layer_sizes[0],
            "input length {} does not match input dim {}",
            input.len(),
            self.layer_sizes[0]
        );
        let mut x = Array1::from_iter(input.iter().copied());
        for layer in 0..3 {
            let mut z = self.weights[layer].dot(&x) + &self.biases[layer];
            if layer < 2 {
                z.mapv_inplace(|v| v.tanh());
            }
            x = z;
        }
        x
    }

    /// Batched forward pass. `inputs` is `(batch, input_dim)`; returns the
    /// `(batch, output_dim)` outputs plus the cache for [`Self::backward_batch`].
    pub fn forward_batch(&self, inputs: ArrayView2<S>) -> (Array2<S>, ForwardCache<S>) {
        assert_eq!(
            inputs.ncols(),
            self.layer_sizes[0],
            "input width {} does not match input dim {}",
            inputs.ncols(),
            self.layer_sizes[0]
        );
        let mut h1 = inputs.dot(&self.weights[0].t()) + &self.biases[0];
        h1.mapv_inplace(|v| v.tanh());
        let mut h2 = h1.dot(&self.weights[1].t()) + &self.biases[1];
        h2.mapv_inplace(|v| v.tanh());
        let out = h2.dot(&self.weights[2].t()) + &self.biases[2];
        let cache = ForwardCache {
            inputs: inputs.to_owned(),
            hidden1: h1,
            hidden2: h2,
        };
        (out, cache)
    }

    /// Backpropagates `output_grads` (`(batch, output_dim)`, the loss gradient
    /// at each raw output) through the cached forward pass. Returns parameter
    /// gradients summed over the batch and the per-sample input gradients.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache<S>,
        output_grads: ArrayView2<S>,
    ) -> (GradBuffer<S>, Array2<S>) {
        assert_eq!(output_grads.ncols(), self.layer_sizes[3]);
        assert_eq!(output_grads.nrows(), cache.inputs.nrows());

        let one = S::one();
        let dw3 = output_grads.t().dot(&cache.hidden2);
        let db3 = output_grads.sum_axis(Axis(0));

        let mut delta2 = output_grads.dot(&self.weights[2]);
        Zip::from(&mut delta2)
            .and(&cache.hidden2)
            .for_each(|d, &h| *d = *d * (one - h * h));
        let dw2 = delta2.t().dot(&cache.hidden1);
        let db2 = delta2.sum_axis(Axis(0));

        let mut delta1 = delta2.dot(&self.weights[1]);
        Zip::from(&mut delta1)
            .and(&cache.hidden1)
            .for_each(|d, &h| *d = *d * (one - h * h));
        let dw1 = delta1.t().dot(&cache.inputs);
        let db1 = delta1.sum_axis(Axis(0));

        let input_grads = delta1.dot(&self.weights[0]);
        (
            GradBuffer {
                weights: vec![dw1, dw2, dw3],
                biases: vec![db1, db2, db3],
            },
            input_grads,
        )
    }

    /// Polyak average: `self ← tau * source + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, source: &Self, tau: S) {
        assert_eq!(self.layer_sizes, source.layer_sizes);
        let keep = S::one() - tau;
        for (w, ws) in self.weights.iter_mut().zip(&source.weights) {
            Zip::from(w).and(ws).for_each(|t, &o| *t = keep * *t + tau * o);
        }
        for (b, bs) in self.biases.iter_mut().zip(&source.biases) {
            Zip::from(b).and(bs).for_each(|t, &o| *t = keep * *t + tau * o);
        }
    }

    /// Number of trainable parameters.
    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Reads the parameter at a flat index (weights first, layer by layer
    /// row-major, then biases). Used by finite-difference checks and tests.
    pub fn param(&self, index: usize) -> S {
        *self.param_slot(index)
    }

    /// Writes the parameter at a flat index. See [`Self::param`].
    pub fn set_param(&mut self, index: usize, value: S) {
        *self.param_slot_mut(index) = value;
    }

    fn param_slot(&self, mut index: usize) -> &S {
        for w in &self.weights {
            if index < w.len() {
                let cols = w.ncols();
                return &w[[index / cols, index % cols]];
            }
            index -= w.len();
        }
        for b in &self.biases {
            if index < b.len() {
                return &b[index];
            }
            index -= b.len();
        }
        panic!("parameter index out of range");
    }

    fn param_slot_mut(&mut self, mut index: usize) -> &mut S {
        for w in &mut self.weights {
            if index < w.len() {
                let cols = w.ncols();
                return &mut w[[index / cols, index % cols]];
            }
            index -= w.len();
        }
        for b in &mut self.biases {
            if index < b.len() {
                return &mut b[index];
            }
            index -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Test/support access to a layer's bias vector.
    pub fn bias_mut(&mut self, layer: usize) -> &mut Array1<S> {
        &mut self.biases[layer]
    }

    pub fn weight(&self, layer: usize) -> &Array2<S> {
        &self.weights[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Array2<S> {
        &mut self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &Array1<S> {
        &self.biases[layer]
    }
}

/// FLOPs of one forward pass: each multiply-accumulate in the affine layers
/// counts as 2 FLOPs; activations are not counted.
pub fn flops_per_inference(layer_sizes: [usize; 4]) -> u64 {
    (0..3)
        .map(|i| 2 * layer_sizes[i] as u64 * layer_sizes[i + 1] as u64)
        .sum()
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamParams<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
}

impl<S: Scalar> AdamParams<S> {
    /// Standard defaults (`beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`) at
    /// the given learning rate.
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr: S::from_f64(lr),
            beta1: S::from_f64(0.9),
            beta2: S::from_f64(0.999),
            epsilon: S::from_f64(1e-8),
        }
    }

    /// One bias-corrected Adam update of a single parameter. `step` is the
    /// already-incremented step count.
    fn update(&self, step: u64, param: &mut S, grad: S, m: &mut S, v: &mut S) {
        let one = S::one();
        *m = self.beta1 * *m + (one - self.beta1) * grad;
        *v = self.beta2 * *v + (one - self.beta2) * grad * grad;
        let m_hat = *m / (one - self.beta1.powi(step as i32));
        let v_hat = *v / (one - self.beta2.powi(step as i32));
        *param = *param - self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
    }
}

/// Adam moment buffers for every parameter of one [`MlpNet`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState<S> {
    m_w: Vec<Array2<S>>,
    v_w: Vec<Array2<S>>,
    m_b: Vec<Array1<S>>,
    v_b: Vec<Array1<S>>,
    step_count: u64,
    pub params: AdamParams<S>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(net: &MlpNet<S>, params: AdamParams<S>) -> Self {
        Self {
            m_w: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            v_b: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            step_count: 0,
            params,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One Adam step over every parameter of `net`. Panics on non-finite
/// gradients with a diagnostic naming the offending layer.
pub fn adam_step<S: Scalar>(net: &mut MlpNet<S>, grads: &GradBuffer<S>, state: &mut AdamState<S>) {
    for (layer, (w, b)) in grads.weights.iter().zip(&grads.biases).enumerate() {
        if w.iter().chain(b.iter()).any(|g| !g.is_finite()) {
            panic!("non-finite gradient in layer {layer}: aborting optimizer step");
        }
    }
    state.step_count += 1;
    let t = state.step_count;
    let p = state.params;
    for layer in 0..3 {
        Zip::from(&mut net.weights[layer])
            .and(&grads.weights[layer])
            .and(&mut state.m_w[layer])
            .and(&mut state.v_w[layer])
            .for_each(|param, &g, m, v| p.update(t, param, g, m, v));
        Zip::from(&mut net.biases[layer])
            .and(&grads.biases[layer])
            .and(&mut state.m_b[layer])
            .and(&mut state.v_b[layer])
            .for_each(|param, &g, m, v| p.update(t, param, g, m, v));
    }
}

/// Adam over one scalar parameter (used for the SAC entropy coefficient).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalarAdam<S> {
    m: S,
    v: S,
    step_count: u64,
    pub params: AdamParams<S>,
}

impl<S: Scalar> ScalarAdam<S> {
    pub fn new(params: AdamParams<S>) -> Self {
        Self {
            m: S::zero(),
            v: S::zero(),
            step_count: 0,
            params,
        }
    }

    pub fn step(&mut self, param: &mut S, grad: S) {
        assert!(grad.is_finite(), "non-finite scalar gradient");
        self.step_count += 1;
        let p = self.params;
        p.update(self.step_count, param, grad, &mut self.m, &mut self.v);
    }
}

/// On-disk form of [`MlpNet`]: layer sizes followed by row-major weights and
/// biases per layer, tagged with [`NET_FORMAT_MAGIC`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetRecord<S> {
    pub magic: String,
    pub layer_sizes: [usize; 4],
    pub layers: Vec<LayerRecord<S>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerRecord<S> {
    pub weights: Vec<S>,
    pub biases: Vec<S>,
}

impl<S: Scalar> MlpNet<S> {
    pub fn to_record(&self) -> NetRecord<S> {
        NetRecord {
            magic: NET_FORMAT_MAGIC.to_string(),
            layer_sizes: self.layer_sizes,
            layers: self
                .weights
                .iter()
                .zip(&self.biases)
                .map(|(w, b)| LayerRecord {
                    weights: w.iter().copied().collect(),
                    biases: b.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_record(record: &NetRecord<S>) -> Result<Self> {
        if record.magic != NET_FORMAT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad net format magic {:?}, expected {:?}",
                record.magic, NET_FORMAT_MAGIC
            )));
        }
        if record.layers.len() != 3 {
            return Err(Error::Checkpoint(format!(
                "expected 3 layers, found {}",
                record.layers.len()
            )));
        }
        let mut net = Self::zeros(record.layer_sizes);
        for (i, layer) in record.layers.iter().enumerate() {
            let (n_out, n_in) = net.weights[i].dim();
            if layer.weights.len() != n_out * n_in || layer.biases.len() != n_out {
                return Err(Error::Checkpoint(format!(
                    "layer {i} shape mismatch against sizes {:?}",
                    record.layer_sizes
                )));
            }
            net.weights[i] =
                Array2::from_shape_vec((n_out, n_in), layer.weights.clone()).expect("shape checked");
            net.biases[i] = Array1::from_vec(layer.biases.clone());
        }
        Ok(net)
    }
}

impl<S: Scalar> GradBuffer<S> {
    pub fn zeros_like(net: &MlpNet<S>) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn scale(&mut self, factor: S) {
        for w in &mut self.weights {
            w.mapv_inplace(|g| g * factor);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|g| g * factor);
        }
    }

    /// Gradient at the flat parameter index used by [`MlpNet::param`].
    pub fn param(&self, mut index: usize) -> S {
        for w in &self.weights {
            if index < w.len() {
                let cols = w.ncols();
                return w[[index / cols, index % cols]];
            }
            index -= w.len();
        }
        for b in &self.biases {
            if index < b.len() {
                return b[index];
            }
            index -= b.len();
        }
        panic!("parameter index out of range");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_net_maps_any_input_to_zero() {
        let net = MlpNet::<f64>::zeros([3, 4, 4, 2]);
        let out = net.forward(&[1.0, -2.0, 0.5]);
        assert_eq!(out.to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_matches_hand_computation() {
        // (1,2,2,1), all weights 0.5, zero biases, input [1].
        let mut net = MlpNet::<f64>::zeros([1, 2, 2, 1]);
        for layer in 0..3 {
            net.weight_mut(layer).fill(0.5);
        }
        let h1 = 0.5f64.tanh();
        let h2 = (2.0 * 0.5 * h1).tanh();
        let expected = 2.0 * 0.5 * h2;
        let out = net.forward(&[1.0]);
        assert_abs_diff_eq!(out[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(out[0], 0.43204, epsilon = 1e-5);
    }

    #[test]
    #[should_panic(expected = "input length")]
    fn forward_rejects_dimension_mismatch() {
        let net = MlpNet::<f64>::zeros([3, 4, 4, 2]);
        net.forward(&[1.0, 2.0]);
    }

    #[test]
    #[should_panic(expected = "hidden layers must have equal width")]
    fn unequal_hidden_layers_rejected() {
        MlpNet::<f64>::zeros([3, 4, 5, 2]);
    }

    #[test]
    fn forward_is_lipschitz_in_the_input() {
        // tanh slope <= 1, so |Δout| <= prod ||W||_inf * |δ| for a one-coordinate bump.
        let mut r = rng(7);
        let net = MlpNet::<f64>::glorot([3, 8, 8, 2], &mut r);
        let base = [0.3, -0.2, 0.9];
        let delta = 1e-3;
        let mut bumped = base;
        bumped[1] += delta;
        let bound: f64 = (0..3)
            .map(|l| {
                net.weight(l)
                    .rows()
                    .into_iter()
                    .map(|row| row.iter().map(|w| w.abs()).sum::<f64>())
                    .fold(0.0, f64::max)
            })
            .product::<f64>()
            * delta;
        let out0 = net.forward(&base);
        let out1 = net.forward(&bumped);
        let change = (&out1 - &out0).iter().map(|d| d.abs()).fold(0.0, f64::max);
        assert!(change <= bound + 1e-12, "change {change} exceeds bound {bound}");
    }

    #[test]
    fn zero_output_gradient_gives_zero_grads() {
        let mut r = rng(3);
        let net = MlpNet::<f64>::glorot([2, 4, 4, 3], &mut r);
        let inputs = array![[0.1, -0.7], [0.4, 0.2]];
        let (_, cache) = net.forward_batch(inputs.view());
        let grads = Array2::zeros((2, 3));
        let (gbuf, input_grads) = net.backward_batch(&cache, grads.view());
        assert!(gbuf.weights.iter().all(|w| w.iter().all(|&g| g == 0.0)));
        assert!(gbuf.biases.iter().all(|b| b.iter().all(|&g| g == 0.0)));
        assert!(input_grads.iter().all(|&g| g == 0.0));
    }

    /// Central finite difference of `loss(net)` w.r.t. every parameter.
    fn fd_gradient(net: &MlpNet<f64>, loss: impl Fn(&MlpNet<f64>) -> f64, eps: f64) -> Vec<f64> {
        let mut probe = net.clone();
        (0..net.param_count())
            .map(|i| {
                let orig = probe.param(i);
                probe.set_param(i, orig + eps);
                let up = loss(&probe);
                probe.set_param(i, orig - eps);
                let down = loss(&probe);
                probe.set_param(i, orig);
                (up - down) / (2.0 * eps)
            })
            .collect()
    }

    fn quadratic_loss_and_grads(
        net: &MlpNet<f64>,
        inputs: &Array2<f64>,
        targets: &Array2<f64>,
    ) -> (f64, GradBuffer<f64>) {
        let batch = inputs.nrows() as f64;
        let (out, cache) = net.forward_batch(inputs.view());
        let resid = &out - targets;
        let loss = resid.iter().map(|r| 0.5 * r * r).sum::<f64>() / batch;
        let out_grads = resid.mapv(|r| r / batch);
        let (grads, _) = net.backward_batch(&cache, out_grads.view());
        (loss, grads)
    }

    #[test]
    fn backprop_matches_finite_differences() {
        for seed in 0..20u64 {
            let mut r = rng(seed);
            let sizes = [
                1 + (seed as usize % 8),
                2 + (seed as usize % 15),
                2 + (seed as usize % 15),
                1 + (seed as usize % 4),
            ];
            let net = MlpNet::<f64>::glorot(sizes, &mut r);
            let inputs = Array2::from_shape_fn((3, sizes[0]), |_| r.random_range(-1.0..1.0));
            let targets = Array2::from_shape_fn((3, sizes[3]), |_| r.random_range(-1.0..1.0));
            let (_, grads) = quadratic_loss_and_grads(&net, &inputs, &targets);
            let fd = fd_gradient(
                &net,
                |n| {
                    let (out, _) = n.forward_batch(inputs.view());
                    (&out - &targets).iter().map(|r| 0.5 * r * r).sum::<f64>() / 3.0
                },
                1e-5,
            );
            for (i, &expected) in fd.iter().enumerate() {
                let got = grads.param(i);
                let rel = (got - expected).abs() / expected.abs().max(1e-6);
                assert!(
                    rel < 1e-4,
                    "seed {seed} param {i}: backprop {got} vs fd {expected}"
                );
            }
        }
    }

    #[test]
    fn gradient_of_half_squared_norm_is_backward_with_output() {
        let mut r = rng(11);
        let net = MlpNet::<f64>::glorot([2, 5, 5, 3], &mut r);
        let inputs = array![[0.2, -0.4]];
        let (out, cache) = net.forward_batch(inputs.view());
        let (grads, _) = net.backward_batch(&cache, out.view());
        let fd = fd_gradient(
            &net,
            |n| {
                let (o, _) = n.forward_batch(inputs.view());
                o.iter().map(|v| 0.5 * v * v).sum()
            },
            1e-5,
        );
        for (i, &expected) in fd.iter().enumerate() {
            let rel = (grads.param(i) - expected).abs() / expected.abs().max(1e-6);
            assert!(rel < 1e-4, "param {i}");
        }
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let mut r = rng(13);
        let net = MlpNet::<f64>::glorot([3, 6, 6, 2], &mut r);
        let x = vec![0.25, -0.5, 0.75];
        let inputs = Array2::from_shape_vec((1, 3), x.clone()).unwrap();
        let (out, cache) = net.forward_batch(inputs.view());
        let (_, input_grads) = net.backward_batch(&cache, out.view());
        for j in 0..3 {
            let eps = 1e-5;
            let mut up = x.clone();
            up[j] += eps;
            let mut down = x.clone();
            down[j] -= eps;
            let loss = |v: &[f64]| net.forward(v).iter().map(|o| 0.5 * o * o).sum::<f64>();
            let fd = (loss(&up) - loss(&down)) / (2.0 * eps);
            let rel = (input_grads[[0, j]] - fd).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-4, "input coord {j}");
        }
    }

    #[test]
    fn adam_single_step_matches_algebra() {
        // One scalar-ish parameter at 0 with gradient 1: bias correction gives
        // m_hat = 1, v_hat = 1, so the step is -lr / (1 + eps) ≈ -lr.
        let mut net = MlpNet::<f64>::zeros([1, 1, 1, 1]);
        let mut state = AdamState::new(&net, AdamParams::with_lr(0.001));
        let mut grads = GradBuffer::zeros_like(&net);
        grads.weights[0][[0, 0]] = 1.0;
        adam_step(&mut net, &grads, &mut state);
        assert_abs_diff_eq!(net.weight(0)[[0, 0]], -0.001, epsilon = 1e-9);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut r = rng(5);
        let mut net = MlpNet::<f64>::glorot([2, 3, 3, 1], &mut r);
        let snapshot = net.clone();
        let mut state = AdamState::new(&net, AdamParams::with_lr(0.01));
        let grads = GradBuffer::zeros_like(&net);
        adam_step(&mut net, &grads, &mut state);
        assert_eq!(net, snapshot);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_is_deterministic() {
        let mut r = rng(9);
        let net_a = MlpNet::<f64>::glorot([2, 4, 4, 2], &mut r);
        let net_b = net_a.clone();
        let inputs = array![[0.1, 0.9], [-0.3, 0.2]];
        let targets = array![[1.0, 0.0], [0.0, 1.0]];
        let run = |mut net: MlpNet<f64>| {
            let mut state = AdamState::new(&net, AdamParams::with_lr(0.003));
            for _ in 0..5 {
                let (_, grads) = quadratic_loss_and_grads(&net, &inputs, &targets);
                adam_step(&mut net, &grads, &mut state);
            }
            net
        };
        assert_eq!(run(net_a), run(net_b));
    }

    #[test]
    #[should_panic(expected = "non-finite gradient")]
    fn adam_rejects_nan_gradients() {
        let mut net = MlpNet::<f64>::zeros([1, 1, 1, 1]);
        let mut state = AdamState::new(&net, AdamParams::with_lr(0.001));
        let mut grads = GradBuffer::zeros_like(&net);
        grads.weights[1][[0, 0]] = f64::NAN;
        adam_step(&mut net, &grads, &mut state);
    }

    #[test]
    fn flops_examples() {
        assert_eq!(flops_per_inference([2, 64, 64, 2]), 8704);
        assert_eq!(flops_per_inference([2, 8, 8, 2]), 192);
        assert_eq!(flops_per_inference([1, 1, 1, 1]), 6);
    }

    #[test]
    fn glorot_is_seed_deterministic_with_zero_biases_in_bounds() {
        let a = MlpNet::<f64>::glorot([3, 16, 16, 4], &mut rng(42));
        let b = MlpNet::<f64>::glorot([3, 16, 16, 4], &mut rng(42));
        assert_eq!(a, b);
        for layer in 0..3 {
            assert!(a.bias(layer).iter().all(|&x| x == 0.0));
            let (n_out, n_in) = a.weight(layer).dim();
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            assert!(a.weight(layer).iter().all(|w| w.abs() <= limit));
        }
    }

    #[test]
    fn net_record_roundtrip_and_magic_check() {
        let mut r = rng(21);
        let net = MlpNet::<f64>::glorot([2, 6, 6, 3], &mut r);
        let json = serde_json::to_string(&net.to_record()).unwrap();
        let record: NetRecord<f64> = serde_json::from_str(&json).unwrap();
        let restored = MlpNet::from_record(&record).unwrap();
        assert_eq!(net, restored);

        let mut bad = net.to_record();
        bad.magic = "ASYMRL-NET-0".to_string();
        assert!(MlpNet::from_record(&bad).is_err());
    }

    #[test]
    fn engine_is_generic_over_f32() {
        let mut r = rng(2);
        let net = MlpNet::<f32>::glorot([2, 4, 4, 1], &mut r);
        let out = net.forward(&[0.5f32, -0.5]);
        assert!(out[0].is_finite());
        assert_eq!(flops_per_inference(net.layer_sizes()), 2 * (8 + 16 + 4));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn flops_strictly_monotone_in_each_layer_size(
                sizes in proptest::array::uniform4(1usize..32),
                which in 0usize..4,
            ) {
                let mut base = sizes;
                base[2] = base[1];
                let mut bigger = base;
                bigger[which] += 1;
                if which == 1 || which == 2 {
                    bigger[1] += if which == 2 { 1 } else { 0 };
                    bigger[2] = bigger[1];
                }
                prop_assert!(flops_per_inference(bigger) > flops_per_inference(base));
            }

            #[test]
            fn forward_is_pure(seed in 0u64..500, x in proptest::collection::vec(-2.0f64..2.0, 3)) {
                let net = MlpNet::<f64>::glorot([3, 5, 5, 2], &mut rng(seed));
                let a = net.forward(&x);
                let b = net.forward(&x);
                prop_assert_eq!(a, b);
            }
        }
    }
}
