//! Dense multilayer perceptron with a flat parameter buffer.
//!
//! Parameters of every layer live in one contiguous `Vec<f64>`: for each
//! layer, the row-major `outputs x inputs` weight matrix followed by the
//! bias vector. Gradients use the same layout, which keeps the optimizer and
//! the checkpoint format trivial.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    offset: usize,
}

impl LayerShape {
    fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inputs * self.outputs;
        start..start + self.outputs
    }

    fn param_count(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }
}

/// Gradient (or any other vector) laid out like an [`Mlp`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad(pub Vec<f64>);

impl ParamGrad {
    pub fn zeros(len: usize) -> Self {
        ParamGrad(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add_assign(&mut self, other: &ParamGrad) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, other: &ParamGrad, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.is_finite())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-layer outputs of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the network input, `activations[k+1]` the output of layer `k`.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds at least the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

impl Mlp {
    /// Builds a network with rectifier hidden layers and a linear output.
    /// `sizes` lists widths from input to output. Weights and biases are drawn
    /// uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for layer in net.layers.clone() {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            let range = layer.offset..layer.offset + layer.param_count();
            for p in &mut net.params[range] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "network needs at least two non-zero layer widths, got {sizes:?}"
            )));
        }
        let n = sizes.len() - 1;
        let shapes = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let activation = if k + 1 == n { Activation::Linear } else { Activation::Relu };
                (w[0], w[1], activation)
            })
            .collect::<Vec<_>>();
        Self::from_shapes(&shapes, None)
    }

    /// Builds a network from explicit `(inputs, outputs, activation)` triples
    /// and optionally a flat parameter vector.
    pub fn from_shapes(shapes: &[(usize, usize, Activation)], params: Option<Vec<f64>>) -> Result<Self> {
        if shapes.is_empty() {
            return Err(Error::InvalidInput("network has no layers".into()));
        }
        let mut layers = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for (k, &(inputs, outputs, activation)) in shapes.iter().enumerate() {
            if inputs == 0 || outputs == 0 {
                return Err(Error::InvalidInput(format!("layer {k} has a zero width")));
            }
            if let Some(prev) = layers.last() {
                let prev: &LayerShape = prev;
                check_dim("layer chaining", prev.outputs, inputs)?;
            }
            let layer = LayerShape { inputs, outputs, activation, offset };
            offset += layer.param_count();
            layers.push(layer);
        }
        let params = match params {
            Some(p) => {
                check_dim("parameter count", offset, p.len())?;
                p
            }
            None => vec![0.0; offset],
        };
        Ok(Mlp { layers, params })
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight matrix of layer `k`, row-major `outputs x inputs`.
    pub fn weights(&self, k: usize) -> &[f64] {
        &self.params[self.layers[k].weight_range()]
    }

    pub fn weights_mut(&mut self, k: usize) -> &mut [f64] {
        let r = self.layers[k].weight_range();
        &mut self.params[r]
    }

    pub fn bias(&self, k: usize) -> &[f64] {
        &self.params[self.layers[k].bias_range()]
    }

    pub fn bias_mut(&mut self, k: usize) -> &mut [f64] {
        let r = self.layers[k].bias_range();
        &mut self.params[r]
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim("mlp forward input", self.input_dim(), input.len())?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = self.layer_forward(layer, &x);
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        check_dim("mlp forward input", self.input_dim(), input.len())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for layer in &self.layers {
            let next = self.layer_forward(layer, activations.last().unwrap());
            activations.push(next);
        }
        Ok(ForwardCache { activations })
    }

    fn layer_forward(&self, layer: &LayerShape, x: &[f64]) -> Vec<f64> {
        let w = &self.params[layer.weight_range()];
        let b = &self.params[layer.bias_range()];
        let mut out = Vec::with_capacity(layer.outputs);
        for (row, &bias) in w.chunks_exact(layer.inputs).zip(b) {
            let z = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            out.push(match layer.activation {
                Activation::Relu => z.max(0.0),
                Activation::Linear => z,
            });
        }
        out
    }

    /// Gradient of `output_grad . forward(input)` with respect to every parameter.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<ParamGrad> {
        let cache = self.forward_cached(input)?;
        let mut grad = ParamGrad::zeros(self.param_count());
        self.backward_accumulate(&cache, output_grad, &mut grad)?;
        Ok(grad)
    }

    /// Adds the parameter gradient for a cached forward pass into `grad` and
    /// returns the gradient with respect to the network input.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grad: &mut ParamGrad,
    ) -> Result<Vec<f64>> {
        check_dim("mlp backward output grad", self.output_dim(), output_grad.len())?;
        check_dim("mlp gradient buffer", self.param_count(), grad.len())?;
        check_dim("mlp forward cache", self.layers.len() + 1, cache.activations.len())?;
        let mut delta = output_grad.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.activations[k + 1];
            if layer.activation == Activation::Relu {
                for (d, &a) in delta.iter_mut().zip(out) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &cache.activations[k];
            let w = &self.params[layer.weight_range()];
            let (gw, gb) =
                grad.0[layer.offset..layer.offset + layer.param_count()].split_at_mut(layer.inputs * layer.outputs);
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = o * layer.inputs..(o + 1) * layer.inputs;
                for ((g, &x), (p, &wv)) in gw[row.clone()].iter_mut().zip(input).zip(prev.iter_mut().zip(&w[row])) {
                    *g += d * x;
                    *p += d * wv;
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Copies parameters from a network of identical shape.
    pub fn copy_from(&mut self, other: &Mlp) -> Result<()> {
        if self.layers != other.layers {
            return Err(Error::InvalidInput("cannot copy parameters between differently shaped networks".into()));
        }
        self.params.copy_from_slice(&other.params);
        Ok(())
    }
}
