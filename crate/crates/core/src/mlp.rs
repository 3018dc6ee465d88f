//! Dense feed-forward layers with manual backpropagation and Adam.
//!
//! Batches are laid out one instance per row, so a layer computes
//! `H = A W^T + 1 b^T` with `W` stored as out x in.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn pre_activation(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = input * self.weights.transpose();
        for (j, b) in self.bias.iter().enumerate() {
            h.column_mut(j).add_scalar_mut(*b);
        }
        h
    }
}

fn activate(pre: &DMatrix<f64>, act: Activation) -> DMatrix<f64> {
    match act {
        Activation::Relu => pre.map(|v| v.max(0.0)),
        Activation::Identity => pre.clone(),
    }
}

/// Stack of dense layers: ReLU on hidden layers, identity on the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer inputs and pre-activations from a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

/// Parameter-shaped container, used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl MlpGradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGradients {
            weights: mlp.layers.iter().map(|l| DMatrix::zeros(l.output_dim(), l.input_dim())).collect(),
            biases: mlp.layers.iter().map(|l| DVector::zeros(l.output_dim())).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| *v == 0.0)) && self.biases.iter().all(|b| b.iter().all(|v| *v == 0.0))
    }
}

impl Mlp {
    /// Layers with sizes `dims[0] -> dims[1] -> ... -> dims[last]`, weights and
    /// biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer sizes {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = || rng.random_range(-bound..bound);
                let weights = DMatrix::from_fn(fan_out, fan_in, |_, _| draw());
                let bias = DVector::from_fn(fan_out, |_, _| draw());
                let activation = if i == last { Activation::Identity } else { Activation::Relu };
                Dense { weights, bias, activation }
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} input columns, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let mut a = x.clone();
        for layer in &self.layers {
            a = activate(&layer.pre_activation(&a), layer.activation);
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, MlpCache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let h = layer.pre_activation(&a);
            let next = activate(&h, layer.activation);
            inputs.push(a);
            pre.push(h);
            a = next;
        }
        Ok((a, MlpCache { inputs, pre }))
    }

    /// Parameter gradients given the gradient of the loss w.r.t. the output.
    pub fn backward(&self, cache: &MlpCache, grad_output: &DMatrix<f64>) -> Result<MlpGradients> {
        if cache.pre.len() != self.layers.len() {
            return Err(Error::CacheMismatch);
        }
        let last = &cache.pre[self.layers.len() - 1];
        if grad_output.shape() != last.shape() {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, output is {:?}",
                grad_output.shape(),
                last.shape()
            )));
        }
        let mut grads = MlpGradients::zeros_like(self);
        let mut delta = grad_output.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                delta.zip_apply(&cache.pre[l], |g, h| {
                    if h <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            grads.weights[l] = delta.transpose() * &cache.inputs[l];
            grads.biases[l] = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            if l > 0 {
                delta = &delta * &layer.weights;
            }
        }
        Ok(grads)
    }

    pub fn parameters_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    #[serde(default = "AdamParams::default_beta1")]
    pub beta1: f64,
    #[serde(default = "AdamParams::default_beta2")]
    pub beta2: f64,
    #[serde(default = "AdamParams::default_eps")]
    pub eps: f64,
}

impl AdamParams {
    fn default_beta1() -> f64 {
        0.9
    }
    fn default_beta2() -> f64 {
        0.999
    }
    fn default_eps() -> f64 {
        1e-8
    }
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    learning_rate: f64,
    step: i32,
    m: MlpGradients,
    v: MlpGradients,
}

impl Adam {
    pub fn new(mlp: &Mlp, learning_rate: f64, params: AdamParams) -> Self {
        Adam {
            params,
            learning_rate,
            step: 0,
            m: MlpGradients::zeros_like(mlp),
            v: MlpGradients::zeros_like(mlp),
        }
    }

    pub fn step(&mut self, mlp: &mut Mlp, grads: &MlpGradients) {
        self.step += 1;
        let AdamParams { beta1, beta2, eps } = self.params;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        let lr = self.learning_rate;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (l, layer) in mlp.layers.iter_mut().enumerate() {
            let (gw, mw, vw) = (&grads.weights[l], &mut self.m.weights[l], &mut self.v.weights[l]);
            for (i, p) in layer.weights.iter_mut().enumerate() {
                update(p, gw[i], &mut mw[i], &mut vw[i]);
            }
            let (gb, mb, vb) = (&grads.biases[l], &mut self.m.biases[l], &mut self.v.biases[l]);
            for (i, p) in layer.bias.iter_mut().enumerate() {
                update(p, gb[i], &mut mb[i], &mut vb[i]);
            }
        }
    }
}
