use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Softplus,
    Tanh,
    Identity,
}

impl Activation {
    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    pub fn first(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(z),
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }

    pub fn second(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Identity => 0.0,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Affine layer `z = W x + b` with `W` stored row-major (`outputs × inputs`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Self {
        assert_eq!(weights.rows(), bias.len());
        Dense {
            inputs: weights.cols(),
            outputs: weights.rows(),
            weights: weights.as_slice().to_vec(),
            bias,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn weight_row(&self, unit: usize) -> &[f64] {
        &self.weights[unit * self.inputs..(unit + 1) * self.inputs]
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.outputs).map(|u| {
            self.bias[u]
                + self
                    .weight_row(u)
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
        }));
    }

    /// `Wᵀ d`.
    fn apply_transposed(&self, d: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inputs];
        for (u, &du) in d.iter().enumerate() {
            if du == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.weight_row(u)) {
                *o += w * du;
            }
        }
        out
    }
}

/// Feed-forward network: every layer but the last is followed by the activation;
/// the last layer emits one logit per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
    activation: Activation,
}

/// Pre-activations of every layer and the inputs each layer saw.
pub(crate) struct Trace {
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// Glorot-uniform hidden layers and a zero output layer, so an untrained
    /// network predicts the uniform distribution.
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, pair) in sizes.windows(2).enumerate() {
            let (inputs, outputs) = (pair[0], pair[1]);
            if i + 2 == sizes.len() {
                layers.push(Dense::zeros(inputs, outputs));
            } else {
                let limit = (6.0 / (inputs + outputs) as f64).sqrt();
                let weights = (0..inputs * outputs)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                layers.push(Dense {
                    inputs,
                    outputs,
                    weights,
                    bias: vec![0.0; outputs],
                });
            }
        }
        Mlp { layers, activation }
    }

    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Self {
        assert!(!layers.is_empty());
        for pair in layers.windows(2) {
            assert_eq!(pair[0].outputs, pair[1].inputs, "layer shapes do not chain");
        }
        Mlp { layers, activation }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut current = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&current, &mut next);
            if l < last {
                for z in next.iter_mut() {
                    *z = self.activation.value(*z);
                }
            }
            std::mem::swap(&mut current, &mut next);
        }
        current
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.apply(&current, &mut z);
            let next = if l < last {
                z.iter().map(|&v| self.activation.value(v)).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut current, next));
            pre.push(z);
        }
        Trace { inputs, pre }
    }

    /// Accumulates parameter gradients for upstream gradient `d_logits`.
    pub(crate) fn backward(&self, trace: &Trace, d_logits: &[f64], grads: &mut [Dense]) {
        let mut delta = d_logits.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let grad = &mut grads[l];
            let input = &trace.inputs[l];
            for (u, &du) in delta.iter().enumerate() {
                grad.bias[u] += du;
                if du == 0.0 {
                    continue;
                }
                let row = &mut grad.weights[u * layer.inputs..(u + 1) * layer.inputs];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += du * x;
                }
            }
            if l > 0 {
                let upstream = layer.apply_transposed(&delta);
                let z = &trace.pre[l - 1];
                delta = upstream
                    .iter()
                    .zip(z)
                    .map(|(g, &zv)| g * self.activation.first(zv))
                    .collect();
            }
        }
    }

    /// ∂ logit[class] / ∂x by reverse-mode differentiation.
    pub fn input_gradient(&self, x: &[f64], class: usize) -> Vec<f64> {
        let trace = self.trace(x);
        let last = self.layers.len() - 1;
        let mut g = self.layers[last].weight_row(class).to_vec();
        for l in (0..last).rev() {
            let dz: Vec<f64> = g
                .iter()
                .zip(&trace.pre[l])
                .map(|(gv, &z)| gv * self.activation.first(z))
                .collect();
            g = self.layers[l].apply_transposed(&dz);
        }
        g
    }

    /// ∂² logit[class] / ∂x∂x.
    ///
    /// For a composition of affine maps and elementwise activations,
    /// `H = Σ_l J_lᵀ diag(σ''(z_l) ⊙ ∂f/∂h_l) J_l` where `J_l = ∂z_l/∂x`.
    /// Only the upper triangle is accumulated and then mirrored, so the
    /// result is exactly symmetric.
    pub fn input_hessian(&self, x: &[f64], class: usize) -> Matrix {
        let n = self.input_dim();
        let trace = self.trace(x);
        let hidden = self.layers.len() - 1;

        // Jacobians of each hidden pre-activation with respect to x.
        let mut jacobians: Vec<Matrix> = Vec::with_capacity(hidden);
        for l in 0..hidden {
            let layer = &self.layers[l];
            let jacobian = if l == 0 {
                Matrix::from_vec(layer.outputs, layer.inputs, layer.weights.clone())
            } else {
                let prev = &jacobians[l - 1];
                let slopes: Vec<f64> = trace.pre[l - 1]
                    .iter()
                    .map(|&z| self.activation.first(z))
                    .collect();
                let mut out = Matrix::zeros(layer.outputs, n);
                for u in 0..layer.outputs {
                    let row = layer.weight_row(u);
                    let target = out.row_mut(u);
                    for (p, (&w, &s)) in row.iter().zip(&slopes).enumerate() {
                        let coeff = w * s;
                        if coeff == 0.0 {
                            continue;
                        }
                        for (t, j) in target.iter_mut().zip(prev.row(p)) {
                            *t += coeff * j;
                        }
                    }
                }
                out
            };
            jacobians.push(jacobian);
        }

        let mut hessian = Matrix::zeros(n, n);
        let mut g = self.layers[hidden].weight_row(class).to_vec();
        for l in (0..hidden).rev() {
            let z = &trace.pre[l];
            let jacobian = &jacobians[l];
            for (u, (&gu, &zu)) in g.iter().zip(z).enumerate() {
                let coeff = gu * self.activation.second(zu);
                if coeff == 0.0 {
                    continue;
                }
                let row = jacobian.row(u);
                for i in 0..n {
                    if row[i] == 0.0 {
                        continue;
                    }
                    for j in i..n {
                        hessian.add_at(i, j, coeff * (row[i] * row[j]));
                    }
                }
            }
            let dz: Vec<f64> = g
                .iter()
                .zip(z)
                .map(|(gv, &zv)| gv * self.activation.first(zv))
                .collect();
            g = self.layers[l].apply_transposed(&dz);
        }
        for i in 0..n {
            for j in 0..i {
                hessian.set(i, j, hessian.get(j, i));
            }
        }
        hessian
    }
}
