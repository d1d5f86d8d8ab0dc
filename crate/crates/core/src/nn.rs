//! Dense multilayer perceptron: ReLU hidden layers, identity output feeding
//! softmax cross-entropy, plain SGD.

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;

use crate::error::{invalid, Error, Result};
use crate::rng::SimRng;

/// Row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, actual: data.len() });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// One fully connected layer. `weights` is `out_dim x in_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(invalid("layer dimensions must be at least 1"));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::DimensionMismatch { expected: in_dim * out_dim, actual: weights.len() });
        }
        if bias.len() != out_dim {
            return Err(Error::DimensionMismatch { expected: out_dim, actual: bias.len() });
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(invalid("layer parameters must be finite"));
        }
        Ok(Layer { in_dim, out_dim, weights, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Weights (row-major) followed by the bias.
    pub fn params(&self) -> impl Iterator<Item = &f64> + '_ {
        self.weights.iter().chain(self.bias.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// An MLP. Every layer but the last applies ReLU; the last one emits logits.
///
/// Gradients use the same type: a `Model` whose parameters hold partial
/// derivatives.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Model {
    layers: Vec<Layer>,
}

pub type Gradients = Model;

impl Model {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("a model needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimensionMismatch { expected: pair[0].out_dim, actual: pair[1].in_dim });
            }
        }
        Ok(Model { layers })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Model { layers: dims.windows(2).map(|d| Layer::zeros(d[0], d[1])).collect() })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// `[in, hidden.., out]`
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            Activation::Identity
        } else {
            Activation::Relu
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn same_shape(&self, other: &Model) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> + '_ {
        self.layers.iter().flat_map(Layer::params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers.iter_mut().flat_map(Layer::params_mut)
    }

    pub(crate) fn check_same_shape(&self, other: &Model) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(invalid("model shapes differ"))
        }
    }
}

/// Inputs with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Matrix,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows == 0 {
            return Err(invalid("batch must hold at least one sample"));
        }
        if inputs.rows != labels.len() {
            return Err(Error::DimensionMismatch { expected: inputs.rows, actual: labels.len() });
        }
        Ok(Batch { inputs, labels })
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-layer inputs and pre-activations recorded by [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(invalid("layer_dims needs at least an input and an output size"));
    }
    if dims.contains(&0) {
        return Err(invalid("layer_dims entries must be at least 1"));
    }
    Ok(())
}

/// Glorot-uniform weights, zero biases.
pub fn init_model(dims: &[usize], seed: u64) -> Result<Model> {
    check_dims(dims)?;
    let mut rng = SimRng::seed_from_u64(seed);
    let layers = dims
        .windows(2)
        .map(|d| {
            let (fan_in, fan_out) = (d[0], d[1]);
            let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot limit");
            let weights = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            Layer { in_dim: fan_in, out_dim: fan_out, weights, bias: vec![0.0; fan_out] }
        })
        .collect();
    Ok(Model { layers })
}

/// `c = a * b` where the strides describe how `a` (`m x k`) and `b`
/// (`k x n`) are laid out; `c` is dense row-major `m x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, c: &mut [f64]) {
    debug_assert!(c.len() == m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices whose extents cover every index reachable
    // through (rows, cols, strides); `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), rsa as isize, csa as isize,
            b.as_ptr(), rsb as isize, csb as isize,
            0.0, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

fn layer_forward(layer: &Layer, x: &Matrix) -> Matrix {
    let rows = x.rows;
    let mut z = Matrix::zeros(rows, layer.out_dim);
    // z = x * W^T
    gemm(rows, layer.in_dim, layer.out_dim, &x.data, layer.in_dim, 1, &layer.weights, 1, layer.in_dim, &mut z.data);
    for row in z.data.chunks_exact_mut(layer.out_dim) {
        for (v, b) in row.iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    z
}

/// Logits for every row of `batch`.
pub fn forward(model: &Model, batch: &Batch) -> Result<(Matrix, ForwardCache)> {
    forward_inputs(model, &batch.inputs)
}

pub(crate) fn forward_inputs(model: &Model, inputs: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if inputs.cols != model.input_dim() {
        return Err(Error::DimensionMismatch { expected: model.input_dim(), actual: inputs.cols });
    }
    let n = model.layers.len();
    let mut cache = ForwardCache { inputs: Vec::with_capacity(n), pre_activations: Vec::with_capacity(n) };
    let mut x = inputs.clone();
    for (i, layer) in model.layers.iter().enumerate() {
        let z = layer_forward(layer, &x);
        let next = match model.activation(i) {
            Activation::Relu => {
                let mut a = z.clone();
                a.data.iter_mut().for_each(|v| *v = v.max(0.0));
                a
            }
            Activation::Identity => z.clone(),
        };
        cache.inputs.push(core::mem::replace(&mut x, next));
        cache.pre_activations.push(z);
    }
    Ok((x, cache))
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for row in out.data.chunks_exact_mut(logits.cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Summed (not averaged) cross-entropy of `logits` against `labels`.
pub(crate) fn cross_entropy_sum(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= logits.cols {
            return Err(invalid("label index out of range for model output"));
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| libm::exp(v - max)).sum();
        total += max + libm::log(sum) - row[label];
    }
    Ok(total)
}

/// Mean softmax cross-entropy over the batch and its gradient.
pub fn loss_and_grads(model: &Model, batch: &Batch) -> Result<(f64, Gradients)> {
    let (logits, cache) = forward(model, batch)?;
    let rows = batch.len();
    let loss = cross_entropy_sum(&logits, &batch.labels)? / rows as f64;

    // dL/dz for the output layer: (softmax - onehot) / rows
    let mut delta = softmax(&logits);
    let scale = 1.0 / rows as f64;
    for (r, &label) in batch.labels.iter().enumerate() {
        let row = &mut delta.data[r * delta.cols..(r + 1) * delta.cols];
        row[label] -= 1.0;
        row.iter_mut().for_each(|v| *v *= scale);
    }

    let mut grads: Vec<Layer> = model.layers.iter().map(|l| Layer::zeros(l.in_dim, l.out_dim)).collect();
    for i in (0..model.layers.len()).rev() {
        let layer = &model.layers[i];
        let x = &cache.inputs[i];
        let g = &mut grads[i];
        // dW = delta^T * x
        gemm(layer.out_dim, rows, layer.in_dim, &delta.data, 1, layer.out_dim, &x.data, layer.in_dim, 1, &mut g.weights);
        for row in delta.data.chunks_exact(layer.out_dim) {
            for (b, d) in g.bias.iter_mut().zip(row) {
                *b += d;
            }
        }
        if i > 0 {
            // dx = delta * W, then through the previous layer's ReLU
            let mut dx = Matrix::zeros(rows, layer.in_dim);
            gemm(rows, layer.out_dim, layer.in_dim, &delta.data, layer.out_dim, 1, &layer.weights, layer.in_dim, 1, &mut dx.data);
            for (d, z) in dx.data.iter_mut().zip(&cache.pre_activations[i - 1].data) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
            delta = dx;
        }
    }
    Ok((loss, Model { layers: grads }))
}

/// `p <- p - eta * g` in place.
pub fn apply_sgd(model: &mut Model, grads: &Gradients, eta: f64) -> Result<()> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(invalid("learning rate must be finite and non-negative"));
    }
    model.check_same_shape(grads)?;
    for (p, g) in model.params_mut().zip(grads.params()) {
        *p -= eta * g;
    }
    Ok(())
}

pub fn sgd_step(model: &Model, grads: &Gradients, eta: f64) -> Result<Model> {
    let mut next = model.clone();
    apply_sgd(&mut next, grads, eta)?;
    Ok(next)
}
