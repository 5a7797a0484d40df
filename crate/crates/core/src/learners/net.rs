//! Feed-forward building blocks shared by the MLP and the representation
//! network: dense layers, activation handling, exact backpropagation over a
//! layer stack, flat parameter views, and first-order optimizers.
//!
//! Initialization is uniform on (-s, s) with s = sqrt(6 / fan_in), biases
//! zero. Gradients are exact; finite-difference tests rely on that.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, Optimizer};

impl Activation {
    #[inline]
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    pub(crate) fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Fully connected layer; `w` is out_dim x in_dim, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Dense {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = (6.0 / in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        Self {
            w,
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn forward(&self, input: &[f64], out: &mut [f64]) {
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            out[o] = self.b[o]
                + row
                    .iter()
                    .zip(input)
                    .map(|(w, x)| w * x)
                    .sum::<f64>();
        }
    }
}

/// Sequence of dense layers with `activation` after every layer except,
/// unless `activate_last`, the final one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Stack {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    pub activate_last: bool,
}

/// Reusable per-row forward state: `values[0]` is the input, `values[k+1]`
/// the post-activation output of layer k.
#[derive(Debug, Default)]
pub(crate) struct StackCache {
    pub values: Vec<Vec<f64>>,
}

/// Gradient accumulator shaped like a stack's parameters.
#[derive(Debug, Clone)]
pub(crate) struct StackGrads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl StackGrads {
    pub fn zeros_like(stack: &Stack) -> Self {
        Self {
            layers: stack
                .layers
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for (gw, gb) in &mut self.layers {
            gw.iter_mut().for_each(|v| *v = 0.0);
            gb.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

impl Stack {
    /// `dims` chains input width through each layer's output width; the last
    /// entry is the stack's output dimension.
    pub fn new(
        in_dim: usize,
        widths: &[usize],
        activation: Activation,
        activate_last: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = in_dim;
        for &w in widths {
            layers.push(Dense::new(prev, w, rng));
            prev = w;
        }
        Self {
            layers,
            activation,
            activate_last,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    fn activated(&self, layer_idx: usize) -> bool {
        layer_idx + 1 < self.layers.len() || self.activate_last
    }

    pub fn forward<'c>(&self, input: &[f64], cache: &'c mut StackCache) -> &'c [f64] {
        cache.values.resize(self.layers.len() + 1, Vec::new());
        cache.values[0].clear();
        cache.values[0].extend_from_slice(input);
        for (k, layer) in self.layers.iter().enumerate() {
            let (head, tail) = cache.values.split_at_mut(k + 1);
            let out = &mut tail[0];
            out.resize(layer.out_dim, 0.0);
            layer.forward(&head[k], out);
            if self.activated(k) {
                for v in out.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
        }
        cache.values.last().expect("nonempty cache")
    }

    pub fn forward_alloc(&self, input: &[f64]) -> Vec<f64> {
        let mut cache = StackCache::default();
        self.forward(input, &mut cache);
        cache.values.pop().expect("nonempty cache")
    }

    /// Backpropagate `grad_out` (gradient at the stack output) through the
    /// cached forward pass, adding parameter gradients into `grads` and, if
    /// given, writing the gradient at the stack input into `grad_input`.
    pub fn backward(
        &self,
        cache: &StackCache,
        grad_out: &[f64],
        grads: &mut StackGrads,
        mut grad_input: Option<&mut [f64]>,
    ) {
        let mut g: Vec<f64> = grad_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &cache.values[k];
            let output = &cache.values[k + 1];
            if self.activated(k) {
                for (gi, a) in g.iter_mut().zip(output) {
                    *gi *= self.activation.derivative_from_output(*a);
                }
            }
            let (gw, gb) = &mut grads.layers[k];
            for o in 0..layer.out_dim {
                let go = g[o];
                gb[o] += go;
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (slot, x) in row.iter_mut().zip(input) {
                    *slot += go * x;
                }
            }
            if k > 0 || grad_input.is_some() {
                let mut g_in = vec![0.0; layer.in_dim];
                for o in 0..layer.out_dim {
                    let go = g[o];
                    let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (slot, w) in g_in.iter_mut().zip(row) {
                        *slot += go * w;
                    }
                }
                if k == 0 {
                    if let Some(dst) = grad_input.as_deref_mut() {
                        dst.copy_from_slice(&g_in);
                    }
                }
                g = g_in;
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
    }

    pub fn read_params(&mut self, src: &[f64], offset: &mut usize) {
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&src[*offset..*offset + nw]);
            *offset += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&src[*offset..*offset + nb]);
            *offset += nb;
        }
    }

    pub fn append_grads(grads: &StackGrads, out: &mut Vec<f64>) {
        for (gw, gb) in &grads.layers {
            out.extend_from_slice(gw);
            out.extend_from_slice(gb);
        }
    }

    /// Squared Euclidean norm of the weights (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.w.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    /// Add the gradient of `lambda * ||W||^2` into `grads`.
    pub fn add_l2_grad(&self, lambda: f64, grads: &mut StackGrads) {
        if lambda == 0.0 {
            return;
        }
        for (layer, (gw, _)) in self.layers.iter().zip(&mut grads.layers) {
            for (slot, w) in gw.iter_mut().zip(&layer.w) {
                *slot += 2.0 * lambda * w;
            }
        }
    }
}

/// First-order update state over a flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) enum OptimizerState {
    Sgd {
        learning_rate: f64,
        momentum: f64,
        velocity: Vec<f64>,
    },
    Adam {
        learning_rate: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: u64,
    },
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    pub fn new(optimizer: &Optimizer, n: usize) -> Self {
        match *optimizer {
            Optimizer::Sgd { learning_rate, momentum } => OptimizerState::Sgd {
                learning_rate,
                momentum,
                velocity: vec![0.0; n],
            },
            Optimizer::Adam { learning_rate } => OptimizerState::Adam {
                learning_rate,
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        match self {
            OptimizerState::Sgd {
                learning_rate,
                momentum,
                velocity,
            } => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity) {
                    *v = *momentum * *v - *learning_rate * g;
                    *p += *v;
                }
            }
            OptimizerState::Adam {
                learning_rate,
                m,
                v,
                t,
            } => {
                *t += 1;
                let b1t = 1.0 - ADAM_BETA1.powi(*t as i32);
                let b2t = 1.0 - ADAM_BETA2.powi(*t as i32);
                for ((p, g), (mi, vi)) in params.iter_mut().zip(grads).zip(m.iter_mut().zip(v)) {
                    *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                    *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *mi / b1t;
                    let v_hat = *vi / b2t;
                    *p -= *learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}
