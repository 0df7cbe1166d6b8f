//! Small dense network with ReLU hidden layers, hand-written backprop and Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
}

/// Fully connected network. Parameters are stored flat, layer by layer, each
/// layer as a row-major `out × in` weight block followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    output: Activation,
    params: Vec<f64>,
}

/// Cached pre-activations and outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[k + 1]` the output of layer `k`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has an output")
    }
}

/// One layer of a serialised network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpParams {
    pub sizes: Vec<usize>,
    pub output: Activation,
    pub layers: Vec<LayerParams>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Uniform fan-in initialisation; the last layer is scaled by `last_scale`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: Activation, last_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "network needs an input and an output layer");
        let mut params = Vec::with_capacity(param_count(sizes));
        let n_layers = sizes.len() - 1;
        for (k, w) in sizes.windows(2).enumerate() {
            let bound = if k + 1 == n_layers { last_scale } else { 1.0 / (w[0] as f64).sqrt() };
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(rng.random_range(-bound..=bound));
            }
        }
        Self { sizes: sizes.to_vec(), output, params }
    }

    pub fn zeros(sizes: &[usize], output: Activation) -> Self {
        Self { sizes: sizes.to_vec(), output, params: vec![0.0; param_count(sizes)] }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().expect("sizes checked at construction")
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for w in self.sizes.windows(2) {
            off.push(off.last().unwrap() + w[0] * w[1] + w[1]);
        }
        off
    }

    pub fn forward_trace(&self, input: &[f64]) -> Trace {
        assert_eq!(input.len(), self.input_len(), "input width");
        let offsets = self.layer_offsets();
        let n_layers = self.sizes.len() - 1;
        let mut acts = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let w = &self.params[offsets[k]..offsets[k] + n_in * n_out];
            let b = &self.params[offsets[k] + n_in * n_out..offsets[k + 1]];
            let x = &acts[k];
            let z: Vec<f64> = (0..n_out)
                .map(|r| b[r] + w[r * n_in..(r + 1) * n_in].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let a = if k + 1 == n_layers {
                match self.output {
                    Activation::Identity => z.clone(),
                    Activation::Tanh => z.iter().map(|v| v.tanh()).collect(),
                }
            } else {
                z.iter().map(|v| v.max(0.0)).collect()
            };
            pre.push(z);
            acts.push(a);
        }
        Trace { acts, pre }
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_trace(input).acts.pop().expect("trace has an output")
    }

    /// Backpropagate `grad_out` (d loss / d output). Parameter gradients are
    /// accumulated into `grad_params`; the input gradient is returned.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad_params.len(), self.params.len(), "gradient buffer size");
        let offsets = self.layer_offsets();
        let n_layers = self.sizes.len() - 1;
        let mut delta: Vec<f64> = match self.output {
            Activation::Identity => grad_out.to_vec(),
            Activation::Tanh => grad_out.iter().zip(trace.output()).map(|(g, y)| g * (1.0 - y * y)).collect(),
        };
        for k in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let x = &trace.acts[k];
            let w_off = offsets[k];
            let b_off = w_off + n_in * n_out;
            for r in 0..n_out {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                grad_params[b_off + r] += d;
                for (g, xi) in grad_params[w_off + r * n_in..w_off + (r + 1) * n_in].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            let mut below = vec![0.0; n_in];
            for r in 0..n_out {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                for (bl, w) in below.iter_mut().zip(&self.params[w_off + r * n_in..w_off + (r + 1) * n_in]) {
                    *bl += d * w;
                }
            }
            if k > 0 {
                for (bl, z) in below.iter_mut().zip(&trace.pre[k - 1]) {
                    if *z <= 0.0 {
                        *bl = 0.0;
                    }
                }
            }
            delta = below;
        }
        delta
    }

    /// `self ← tau·source + (1 − tau)·self`.
    pub fn soft_update(&mut self, source: &Mlp, tau: f64) {
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn to_params(&self) -> MlpParams {
        let offsets = self.layer_offsets();
        let layers = self
            .sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (n_in, n_out) = (w[0], w[1]);
                let block = &self.params[offsets[k]..offsets[k + 1]];
                LayerParams {
                    weights: block[..n_in * n_out].chunks(n_in).map(<[f64]>::to_vec).collect(),
                    bias: block[n_in * n_out..].to_vec(),
                }
            })
            .collect();
        MlpParams { sizes: self.sizes.clone(), output: self.output, layers }
    }

    pub fn from_params(p: &MlpParams) -> Result<Self> {
        if p.sizes.len() < 2 || p.layers.len() + 1 != p.sizes.len() {
            return Err(Error::Config("network layer list does not match its sizes".into()));
        }
        let mut params = Vec::with_capacity(param_count(&p.sizes));
        for (layer, w) in p.layers.iter().zip(p.sizes.windows(2)) {
            if layer.weights.len() != w[1] || layer.weights.iter().any(|r| r.len() != w[0]) || layer.bias.len() != w[1] {
                return Err(Error::Config(format!("layer shape does not match {} -> {}", w[0], w[1])));
            }
            layer.weights.iter().for_each(|r| params.extend_from_slice(r));
            params.extend_from_slice(&layer.bias);
        }
        let mlp = Self { sizes: p.sizes.clone(), output: p.output, params };
        if !mlp.is_finite() {
            return Err(Error::Numeric("network parameters are not finite".into()));
        }
        Ok(mlp)
    }
}

/// Adam optimiser over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    /// Descend along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}
