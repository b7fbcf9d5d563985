//! A small fully connected network with exact reverse-mode gradients.
//!
//! Weights are `out × in`, row-major. Initialization is Xavier-uniform,
//! `U(−√(6/(in+out)), √(6/(in+out)))`, drawn from [`SplitMix64`], with zero
//! biases; the same seed always yields bit-identical parameters.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn xavier(inputs: usize, outputs: usize, activation: Activation, rng: &mut SplitMix64) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.inputs + col]
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|r| {
                let row = &self.weights[r * self.inputs..(r + 1) * self.inputs];
                self.bias[r] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Dense>,
}

/// Parameter gradients, shaped like the network, plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            input: vec![0.0; net.input_dim()],
        }
    }

    /// `self += scale · other` over parameter gradients; the input gradient is left alone.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.iter_mut().flatten().for_each(|x| *x *= s);
        self.bias.iter_mut().flatten().for_each(|x| *x *= s);
    }
}

/// Intermediate values kept by [`DenseNet::forward_trace`] for backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[0]` is the input; `activations[k+1]` the output of layer k.
    pub activations: Vec<Vec<f64>>,
    pub pre_activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("input is always recorded")
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::contract(format!(
                    "layer widths do not chain: {} → {}",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::contract("layer parameter shape mismatch"));
            }
            if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::contract("non-finite parameter"));
            }
        }
        if layers.is_empty() {
            return Err(Error::contract("network needs at least one layer"));
        }
        Ok(Self { layers })
    }

    /// MLP with the given widths, ReLU between layers and `last` at the output.
    pub fn mlp(widths: &[usize], last: Activation, seed: u64) -> Self {
        assert!(widths.len() >= 2, "need input and output widths");
        let mut rng = SplitMix64::new(seed);
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { last } else { Activation::Relu };
                Dense::xavier(widths[k], widths[k + 1], act, &mut rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for l in &self.layers {
            a = l.pre_activation(&a).into_iter().map(|z| l.activation.apply(z)).collect();
        }
        Ok(a)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut activations = vec![x.to_vec()];
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let z = l.pre_activation(activations.last().expect("non-empty"));
            let a = z.iter().map(|v| l.activation.apply(*v)).collect();
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(Trace {
            activations,
            pre_activations,
        })
    }

    /// Gradients of `⟨upstream, forward(x)⟩` with respect to every parameter and `x`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Gradients> {
        let trace = self.forward_trace(x)?;
        self.backward_from_trace(&trace, upstream)
    }

    pub fn backward_from_trace(&self, trace: &Trace, upstream: &[f64]) -> Result<Gradients> {
        if upstream.len() != self.output_dim() {
            return Err(Error::contract(format!(
                "upstream gradient has {} entries, network outputs {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta_out = upstream.to_vec();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre_activations[k];
            let a = &trace.activations[k + 1];
            let input = &trace.activations[k];
            let delta: Vec<f64> = (0..l.outputs)
                .map(|r| delta_out[r] * l.activation.derivative(z[r], a[r]))
                .collect();
            let gw = &mut grads.weights[k];
            for r in 0..l.outputs {
                for c in 0..l.inputs {
                    gw[r * l.inputs + c] = delta[r] * input[c];
                }
            }
            grads.bias[k].copy_from_slice(&delta);
            let mut delta_in = vec![0.0; l.inputs];
            for r in 0..l.outputs {
                let row = &l.weights[r * l.inputs..(r + 1) * l.inputs];
                for (d, w) in delta_in.iter_mut().zip(row) {
                    *d += delta[r] * w;
                }
            }
            delta_out = delta_in;
        }
        grads.input = delta_out;
        Ok(grads)
    }

    /// Plain SGD: `θ ← θ − lr·∇θ`.
    pub fn step(&mut self, grads: &Gradients, lr: f64) {
        for (k, l) in self.layers.iter_mut().enumerate() {
            l.weights
                .iter_mut()
                .zip(&grads.weights[k])
                .for_each(|(w, g)| *w -= lr * g);
            l.bias.iter_mut().zip(&grads.bias[k]).for_each(|(b, g)| *b -= lr * g);
        }
    }

    /// Flat view of every parameter (weights then bias, layer by layer).
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_parameter(&mut self, flat_index: usize, value: f64) {
        let mut i = flat_index;
        for l in &mut self.layers {
            if i < l.weights.len() {
                l.weights[i] = value;
                return;
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                l.bias[i] = value;
                return;
            }
            i -= l.bias.len();
        }
        panic!("parameter index {flat_index} out of range");
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: DenseNet = serde_json::from_str(text)
            .map_err(|e| Error::format("network parameters", Some(e.line()), e.to_string()))?;
        DenseNet::new(net.layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Gradients {
    /// Flat view matching [`DenseNet::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }
}
