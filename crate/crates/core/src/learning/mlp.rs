//! Fully connected networks with hand-written backpropagation.
//!
//! Inputs are row-major batches: one sample per row.

use super::LearningError;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(&self, z: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        }
    }

    /// Multiplies `grad` by the derivative, given the activated output `y`.
    fn backprop(&self, y: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => grad.zip_mut_with(y, |g, &y| *g *= 1.0 - y * y),
            Activation::Relu => grad.zip_mut_with(y, |g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `inputs x outputs`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-layer gradients, shaped like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            bias: net.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.bias.iter().flat_map(|b| b.iter()))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Layer inputs and activated outputs from a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("network has layers")
    }
}

impl Mlp {
    /// `sizes` lists the layer widths from input to output. Weights start
    /// uniform in `±1/sqrt(fan_in)`, biases at zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "a network needs an input and an output size");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let bound = 1.0 / (sizes[i] as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_fn((sizes[i], sizes[i + 1]), |_| rng.random_range(-bound..bound)),
                    bias: Array1::zeros(sizes[i + 1]),
                    activation: if i + 1 == n { output } else { hidden },
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weights.ncols()).unwrap_or(0)
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<(), LearningError> {
        if x.ncols() != self.input_dim() {
            return Err(LearningError::Shape { expected: self.input_dim(), got: x.ncols() });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, LearningError> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for l in &self.layers {
            let mut z = h.dot(&l.weights) + &l.bias;
            l.activation.apply(&mut z);
            h = z;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<MlpCache, LearningError> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for l in &self.layers {
            let mut z = h.dot(&l.weights) + &l.bias;
            l.activation.apply(&mut z);
            inputs.push(h);
            h = z;
            outputs.push(h.clone());
        }
        Ok(MlpCache { inputs, outputs })
    }

    /// Gradients of `sum(upstream * forward(x))` with respect to the
    /// parameters and to the input, given a cached forward pass.
    pub fn backward_cached(&self, cache: &MlpCache, upstream: ArrayView2<'_, f64>) -> (Gradients, Array2<f64>) {
        let mut grads = Gradients::zeros_like(self);
        let mut g = upstream.to_owned();
        for (i, l) in self.layers.iter().enumerate().rev() {
            l.activation.backprop(&cache.outputs[i], &mut g);
            grads.weights[i] = cache.inputs[i].t().dot(&g);
            grads.bias[i] = g.sum_axis(Axis(0));
            g = g.dot(&l.weights.t());
        }
        (grads, g)
    }

    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<(Gradients, Array2<f64>), LearningError> {
        let cache = self.forward_cached(x)?;
        if upstream.dim() != cache.output().dim() {
            return Err(LearningError::Shape { expected: self.output_dim(), got: upstream.ncols() });
        }
        Ok(self.backward_cached(&cache, upstream))
    }

    /// `self <- (1 - rate) self + rate online`.
    pub fn polyak(&mut self, online: &Mlp, rate: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.weights.zip_mut_with(&o.weights, |t, &o| *t += rate * (o - *t));
            t.bias.zip_mut_with(&o.bias, |t, &o| *t += rate * (o - *t));
        }
    }

    /// Squared distance between the parameters of two same-shaped networks.
    pub fn distance_sq(&self, other: &Mlp) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                (&a.weights - &b.weights).mapv(|v| v * v).sum() + (&a.bias - &b.bias).mapv(|v| v * v).sum()
            })
            .sum()
    }

    /// Adds the gradient of `coef / 2 * |weights|^2` (biases excluded).
    pub fn add_l2_gradient(&self, grads: &mut Gradients, coef: f64) {
        if coef == 0.0 {
            return;
        }
        for (g, l) in grads.weights.iter_mut().zip(&self.layers) {
            g.scaled_add(coef, &l.weights);
        }
    }

    #[cfg(test)]
    pub(crate) fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}
