//! Dense tanh networks for the actor and critic, with hand-written reverse-mode
//! gradients and an Adam optimizer.
//!
//! Everything is `f64`. Batches are row-major: one sample per row.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::Observation;

/// `½·ln(2π)`.
pub const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8;
pub const LOG_STD_BOUNDS: (f64, f64) = (-20.0, 2.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `out × in`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { w: Array2::zeros((outputs, inputs)), b: Array1::zeros(outputs) }
    }

    /// Orthogonal weights scaled by `gain`, zero bias.
    pub fn orthogonal(inputs: usize, outputs: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let tall = outputs >= inputs;
        let (rows, cols) = if tall { (outputs, inputs) } else { (inputs, outputs) };
        let mut m = Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng));
        // Modified Gram-Schmidt on the columns.
        for j in 0..cols {
            for k in 0..j {
                let dot: f64 = m.column(j).dot(&m.column(k));
                let prev = m.column(k).to_owned();
                m.column_mut(j).scaled_add(-dot, &prev);
            }
            let norm = m.column(j).dot(&m.column(j)).sqrt();
            m.column_mut(j).mapv_inplace(|x| x / norm);
        }
        let w = if tall { m } else { m.reversed_axes().as_standard_layout().to_owned() };
        Self { w: w * gain, b: Array1::zeros(outputs) }
    }

    fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }
}

/// Multilayer perceptron: tanh on every hidden layer, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Layer inputs recorded on the forward pass (`inputs[0]` is the network input).
#[derive(Debug, Clone)]
pub struct MlpTape {
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden_gain`, the last `output_gain`.
    pub fn orthogonal(sizes: &[usize], hidden_gain: f64, output_gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::orthogonal(w[0], w[1], if i == last { output_gain } else { hidden_gain }, rng))
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Linear::zeros(l.w.ncols(), l.w.nrows())).collect() }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            a = layer.forward(a.view());
            if i < last {
                a.mapv_inplace(f64::tanh);
            }
        }
        a
    }

    pub fn forward_taped(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpTape) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(a.view());
            inputs.push(a);
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            a = z;
        }
        (a, MlpTape { inputs })
    }

    /// Gradients of a scalar loss given `∂L/∂output` for every row.
    pub fn backward(&self, tape: &MlpTape, d_out: Array2<f64>) -> Mlp {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = d_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let a = &tape.inputs[i];
            let dw = g.t().dot(a);
            let db = g.sum_axis(Axis(0));
            grads.push(Linear { w: dw, b: db });
            if i > 0 {
                let mut back = g.dot(&layer.w);
                back.zip_mut_with(a, |d, &act| *d *= 1.0 - act * act);
                g = back;
            }
        }
        grads.reverse();
        Mlp { layers: grads }
    }

    fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [l.w.as_slice().expect("standard layout"), l.b.as_slice().expect("standard layout")]
        })
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [l.w.as_slice_mut().expect("standard layout"), l.b.as_slice_mut().expect("standard layout")]
        })
    }
}

/// Network shapes and initialisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Fixed per-feature divisors applied to `(q, q̇, q̈, F, F_des)` before the
    /// first layer. Constant unit conversion, not a running normaliser.
    pub input_scale: [f64; 5],
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            policy_hidden: vec![256, 256],
            value_hidden: vec![256, 256],
            init_log_std: -1.6,
            input_scale: [0.25, 1.0, 20.0, 100.0, 100.0],
        }
    }
}

/// Actor (Gaussian mean head + global log-std) and critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub actor: Mlp,
    /// State-independent, one entry per action dimension.
    pub log_std: Array1<f64>,
    pub critic: Mlp,
    pub input_scale: [f64; 5],
}

impl PolicyParams {
    pub fn new(cfg: &NetConfig, rng: &mut ChaCha8Rng) -> Self {
        let sizes = |hidden: &[usize]| {
            let mut s = vec![Observation::DIM];
            s.extend_from_slice(hidden);
            s.push(1);
            s
        };
        let hidden_gain = std::f64::consts::SQRT_2;
        Self {
            actor: Mlp::orthogonal(&sizes(&cfg.policy_hidden), hidden_gain, 0.01, rng),
            log_std: Array1::from_elem(1, cfg.init_log_std),
            critic: Mlp::orthogonal(&sizes(&cfg.value_hidden), hidden_gain, 1.0, rng),
            input_scale: cfg.input_scale,
        }
    }

    /// Same shapes, all trainable entries zero. Used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            actor: self.actor.zeros_like(),
            log_std: Array1::zeros(self.log_std.len()),
            critic: self.critic.zeros_like(),
            input_scale: self.input_scale,
        }
    }

    pub fn scale_input(&self, obs: &Observation) -> [f64; 5] {
        let raw = obs.to_array();
        std::array::from_fn(|i| raw[i] / self.input_scale[i])
    }

    /// Scaled batch, one observation per row.
    pub fn input_batch<'a>(&self, obs: impl ExactSizeIterator<Item = &'a Observation>) -> Array2<f64> {
        let n = obs.len();
        let mut x = Array2::zeros((n, Observation::DIM));
        for (mut row, o) in x.rows_mut().into_iter().zip(obs) {
            for (dst, v) in row.iter_mut().zip(self.scale_input(o)) {
                *dst = v;
            }
        }
        x
    }

    pub fn std(&self) -> f64 {
        self.log_std[0].exp()
    }

    pub fn clamp_log_std(&mut self) {
        let (lo, hi) = LOG_STD_BOUNDS;
        self.log_std.mapv_inplace(|s| s.clamp(lo, hi));
    }

    /// Trainable tensors in a fixed order: actor layers, log-std, critic layers.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self.actor.tensors().collect();
        v.push(self.log_std.as_slice().expect("standard layout"));
        v.extend(self.critic.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self.actor.tensors_mut().collect();
        v.push(self.log_std.as_slice_mut().expect("standard layout"));
        v.extend(self.critic.tensors_mut());
        v
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn scale_all(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

/// Policy mean and standard deviation for one observation.
pub fn actor_forward(p: &PolicyParams, obs: &Observation) -> (f64, f64) {
    let x = Array2::from_shape_vec((1, Observation::DIM), p.scale_input(obs).to_vec()).expect("shape");
    (p.actor.forward(x.view())[[0, 0]], p.std())
}

pub fn critic_forward(p: &PolicyParams, obs: &Observation) -> f64 {
    let x = Array2::from_shape_vec((1, Observation::DIM), p.scale_input(obs).to_vec()).expect("shape");
    p.critic.forward(x.view())[[0, 0]]
}

/// Gaussian log-density.
pub fn log_prob(a: f64, mean: f64, log_std: f64) -> f64 {
    let z = (a - mean) / log_std.exp();
    -0.5 * z * z - log_std - HALF_LN_TAU
}

/// Differential entropy of a Gaussian with this log-std.
pub fn gaussian_entropy(log_std: f64) -> f64 {
    log_std + 0.5 + HALF_LN_TAU
}

/// Draws `a ~ N(mean, std²)` and returns it with its log-density.
pub fn sample_action(mean: f64, std: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let eps: f64 = StandardNormal.sample(rng);
    let a = mean + std * eps;
    (a, log_prob(a, mean, std.ln()))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub lr: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// Returned when a step was skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonFiniteGradient;

impl Adam {
    pub fn new(params: &PolicyParams) -> Self {
        Self::with_shapes(params.tensors().iter().map(|t| t.len()))
    }

    fn with_shapes(shapes: impl Iterator<Item = usize>) -> Self {
        let zeros: Vec<Vec<f64>> = shapes.map(|n| vec![0.0; n]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, lr: 0.0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut PolicyParams, grads: &PolicyParams, lr: f64) -> Result<(), NonFiniteGradient> {
        if !grads.all_finite() {
            return Err(NonFiniteGradient);
        }
        let g = grads.tensors();
        let mut p = params.tensors_mut();
        self.apply(&mut p, &g, lr);
        params.clamp_log_std();
        Ok(())
    }

    fn apply(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        self.step += 1;
        self.lr = lr;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
