//! Dense networks with ReLU hidden layers, two-way softmax cross-entropy,
//! exact backpropagation and Adam.
//!
//! Everything is `f64`. Weights are stored row-major, one row per output
//! unit, so a layer maps `x` to `W x + b`.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// Three affine layers, each hidden width half of the previous one.
    Mlp,
    /// A single affine layer.
    Linear,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Mlp => "mlp",
            Arch::Linear => "linear",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "mlp" => Some(Arch::Mlp),
            "linear" => Some(Arch::Linear),
            _ => None,
        }
    }

    /// Layer widths from input to output.
    pub fn dims(self, input: usize, output: usize) -> Vec<usize> {
        match self {
            Arch::Mlp => {
                let h1 = (input / 2).max(2);
                let h2 = (h1 / 2).max(2);
                vec![input, h1, h2, output]
            }
            Arch::Linear => vec![input, output],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseLayer {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// Activations recorded by [`DenseParams::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

/// Parameters of a dense network. Also used for gradients and Adam moments,
/// which share the parameter shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    layers: Vec<DenseLayer>,
}

impl DenseParams {
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "network needs at least one layer");
        DenseParams {
            layers: dims.windows(2).map(|w| DenseLayer::zeros(w[1], w[0])).collect(),
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let mut params = Self::zeros(dims);
        for layer in &mut params.layers {
            let limit = (6.0 / (layer.rows + layer.cols) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.gen_range(-limit..=limit);
            }
        }
        params
    }

    pub fn build<R: Rng + ?Sized>(arch: Arch, input: usize, output: usize, rng: &mut R) -> Self {
        Self::init(&arch.dims(input, output), rng)
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Checkpoint("network without layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].cols != pair[0].rows {
                return Err(Error::Dimension {
                    expected: pair[0].rows,
                    actual: pair[1].cols,
                });
            }
        }
        for l in &layers {
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::Dimension {
                    expected: l.rows * l.cols,
                    actual: l.weights.len(),
                });
            }
        }
        Ok(DenseParams { layers })
    }

    pub fn zeros_like(&self) -> Self {
        DenseParams {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.rows, l.cols))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn same_shape(&self, other: &DenseParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.rows == b.rows && a.cols == b.cols)
    }

    /// Flat view of all parameters, layer by layer, weights before bias.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &DenseParams, scale: f64) {
        assert!(self.same_shape(other), "parameter shape mismatch");
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    /// Output logits without recording activations.
    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.apply(&x);
            if i < last {
                relu_in_place(&mut x);
            }
        }
        Ok(x)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&x);
            cache.inputs.push(x);
            x = z.clone();
            cache.pre.push(z);
            if i < last {
                relu_in_place(&mut x);
            }
        }
        Ok((x, cache))
    }

    /// Gradient of a scalar loss with respect to every parameter, given the
    /// loss gradient with respect to the logits.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64]) -> Result<DenseParams> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Dimension {
                expected: self.layers.len(),
                actual: cache.inputs.len(),
            });
        }
        if dlogits.len() != self.output_dim() {
            return Err(Error::Dimension {
                expected: self.output_dim(),
                actual: dlogits.len(),
            });
        }
        let mut grads = self.zeros_like();
        let mut delta = dlogits.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            let g = &mut grads.layers[l];
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut g.weights[r * layer.cols..(r + 1) * layer.cols];
                for (w, x) in row.iter_mut().zip(input) {
                    *w = d * x;
                }
            }
            g.bias.copy_from_slice(&delta);
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.cols];
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += w * d;
                }
            }
            // ReLU subgradient at 0 is 0
            for (p, z) in prev.iter_mut().zip(&cache.pre[l - 1]) {
                if *z <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        Ok(grads)
    }
}

fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[class]` and its gradient `softmax - onehot(class)`.
pub fn cross_entropy(logits: &[f64], class: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum - logits[class];
    let mut grad = softmax(logits);
    grad[class] -= 1.0;
    (loss, grad)
}

/// Index of the largest logit; ties go to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Parameter count of a game with `submodels` networks on `input_dim`
/// chains, each ending in a two-way output. For [`Arch::Linear`] the first
/// submodel (the generator) keeps the MLP shape.
pub fn param_count(input_dim: usize, arch: Arch, submodels: usize) -> usize {
    let count = |arch: Arch| -> usize {
        arch.dims(input_dim, 2)
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    };
    match (arch, submodels) {
        (_, 0) => 0,
        (Arch::Mlp, n) => n * count(Arch::Mlp),
        (Arch::Linear, n) => count(Arch::Mlp) + (n - 1) * count(Arch::Linear),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction; moments are shaped like the parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: DenseParams,
    v: DenseParams,
}

impl Adam {
    pub fn new(params: &DenseParams, config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut DenseParams, grads: &DenseParams) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.m) {
            return Err(Error::Dimension {
                expected: self.m.num_params(),
                actual: grads.num_params(),
            });
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let moments = self.m.values_mut().zip(self.v.values_mut());
        for ((p, g), (m, v)) in params.values_mut().zip(grads.values()).zip(moments) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}
