//! Feed-forward classifier providing discriminant probabilities and exact
//! input derivatives of its logits.

mod checkpoint;
mod mlp;

pub use mlp::{Activation, Dense, Mlp};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Encoder, Table, Value};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorSpec {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PredictorSpec {
    fn default() -> Self {
        PredictorSpec {
            hidden_layers: vec![64, 32],
            activation: Activation::Softplus,
            l2: 1e-4,
            learning_rate: 5e-3,
            epochs: 30,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl PredictorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::Config(format!(
                "hidden layers must be non-empty with positive widths, got {:?}",
                self.hidden_layers
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::Config("learning_rate must be > 0 and l2 >= 0".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        PredictorSpec {
            seed,
            ..self.clone()
        }
    }
}

/// A model whose class logits can be differentiated with respect to its
/// (encoded) input.
pub trait LogitModel {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn logits(&self, input: &[f64]) -> Vec<f64>;
    fn input_gradient(&self, input: &[f64], class: usize) -> Vec<f64>;
    fn input_hessian(&self, input: &[f64], class: usize) -> Matrix;
}

impl LogitModel for Mlp {
    fn input_dim(&self) -> usize {
        Mlp::input_dim(self)
    }

    fn num_classes(&self) -> usize {
        self.output_dim()
    }

    fn logits(&self, input: &[f64]) -> Vec<f64> {
        Mlp::logits(self, input)
    }

    fn input_gradient(&self, input: &[f64], class: usize) -> Vec<f64> {
        Mlp::input_gradient(self, input, class)
    }

    fn input_hessian(&self, input: &[f64], class: usize) -> Matrix {
        Mlp::input_hessian(self, input, class)
    }
}

/// Anything that yields `P(y | x)` for a schema row.
pub trait ClassProbability {
    fn class_probabilities(&self, row: &[Value]) -> Result<Vec<f64>>;
}

/// Label prior used when a dataset holds a single class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPrior(pub Vec<f64>);

impl ClassPrior {
    /// Add-one smoothed label frequencies.
    pub fn from_table(table: &Table) -> Self {
        let counts = table.class_counts();
        let total = (table.len() + counts.len()) as f64;
        ClassPrior(counts.iter().map(|&c| (c as f64 + 1.0) / total).collect())
    }
}

impl ClassProbability for ClassPrior {
    fn class_probabilities(&self, _row: &[Value]) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedPredictor {
    pub spec: PredictorSpec,
    pub network: Mlp,
    pub encoder: Encoder,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
}

impl TrainedPredictor {
    /// Untrained network (zero output layer) over `encoder`.
    pub fn untrained(spec: &PredictorSpec, encoder: Encoder, num_classes: usize) -> Self {
        let mut sizes = vec![encoder.dim()];
        sizes.extend(&spec.hidden_layers);
        sizes.push(num_classes);
        let mut rng = seed::rng(seed::derive(spec.seed, "predictor-init"));
        TrainedPredictor {
            spec: spec.clone(),
            network: Mlp::new(&sizes, spec.activation, &mut rng),
            encoder,
            loss_trace: Vec::new(),
        }
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_trace.last().copied()
    }

    pub fn encode(&self, row: &[Value]) -> Result<Vec<f64>> {
        self.encoder.encode(row)
    }

    pub fn predict_proba(&self, row: &[Value]) -> Result<Vec<f64>> {
        Ok(softmax(&self.network.logits(&self.encoder.encode(row)?)))
    }

    pub fn predict_proba_encoded(&self, input: &[f64]) -> Vec<f64> {
        softmax(&self.network.logits(input))
    }

    pub fn predict_table(&self, table: &Table) -> Result<Vec<Vec<f64>>> {
        table.rows.iter().map(|r| self.predict_proba(r)).collect()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        checkpoint::load(path)
    }
}

impl ClassProbability for TrainedPredictor {
    fn class_probabilities(&self, row: &[Value]) -> Result<Vec<f64>> {
        self.predict_proba(row)
    }
}

impl LogitModel for TrainedPredictor {
    fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    fn num_classes(&self) -> usize {
        self.network.output_dim()
    }

    fn logits(&self, input: &[f64]) -> Vec<f64> {
        self.network.logits(input)
    }

    fn input_gradient(&self, input: &[f64], class: usize) -> Vec<f64> {
        self.network.input_gradient(input, class)
    }

    fn input_hessian(&self, input: &[f64], class: usize) -> Matrix {
        self.network.input_hessian(input, class)
    }
}

/// Trains with mini-batch Adam on (optionally class-weighted) softmax
/// cross-entropy plus L2. Classes are weighted by inverse frequency when the
/// largest-to-smallest present class ratio exceeds 10.
pub fn train(table: &Table, encoder: &Encoder, spec: &PredictorSpec) -> Result<TrainedPredictor> {
    spec.validate()?;
    let counts = table.class_counts();
    let present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    if present.len() < 2 {
        return Err(Error::Model(
            "training needs at least two label classes present".into(),
        ));
    }
    let num_classes = counts.len();
    let max = *present.iter().max().unwrap() as f64;
    let min = *present.iter().min().unwrap() as f64;
    let class_weights: Vec<f64> = if max / min > 10.0 {
        counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    0.0
                } else {
                    table.len() as f64 / (present.len() as f64 * c as f64)
                }
            })
            .collect()
    } else {
        vec![1.0; num_classes]
    };

    let inputs = encoder.encode_table(table)?;
    let labels = table.labels();
    let mut model = TrainedPredictor::untrained(spec, encoder.clone(), num_classes);
    let mut optimizer = Adam::new(model.network.layers());
    let mut order: Vec<usize> = (0..table.len()).collect();
    let mut rng = seed::rng(seed::derive(spec.seed, "predictor-shuffle"));

    for _epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(spec.batch_size) {
            let mut grads: Vec<Dense> = model
                .network
                .layers()
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let trace = model.network.trace(&inputs[i]);
                let probs = softmax(trace.pre.last().unwrap());
                let weight = class_weights[labels[i]];
                epoch_loss -= weight * probs[labels[i]].max(1e-300).ln();
                let d_logits: Vec<f64> = probs
                    .iter()
                    .enumerate()
                    .map(|(c, &p)| weight * scale * (p - if c == labels[i] { 1.0 } else { 0.0 }))
                    .collect();
                model.network.backward(&trace, &d_logits, &mut grads);
            }
            if spec.l2 > 0.0 {
                for (grad, layer) in grads.iter_mut().zip(model.network.layers()) {
                    for (g, w) in grad.weights.iter_mut().zip(&layer.weights) {
                        *g += spec.l2 * w;
                    }
                }
            }
            optimizer.step(model.network.layers_mut(), &grads, spec.learning_rate);
        }
        model.loss_trace.push(epoch_loss / table.len() as f64);
    }
    Ok(model)
}

struct Adam {
    first: Vec<Dense>,
    second: Vec<Dense>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(layers: &[Dense]) -> Self {
        let zeros = || {
            layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect::<Vec<_>>()
        };
        Adam {
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    fn step(&mut self, layers: &mut [Dense], grads: &[Dense], learning_rate: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (l, layer) in layers.iter_mut().enumerate() {
            let update = |params: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for k in 0..params.len() {
                    m[k] = Self::BETA1 * m[k] + (1.0 - Self::BETA1) * g[k];
                    v[k] = Self::BETA2 * v[k] + (1.0 - Self::BETA2) * g[k] * g[k];
                    params[k] -= learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + Self::EPS);
                }
            };
            update(
                &mut layer.weights,
                &grads[l].weights,
                &mut self.first[l].weights,
                &mut self.second[l].weights,
            );
            update(
                &mut layer.bias,
                &grads[l].bias,
                &mut self.first[l].bias,
                &mut self.second[l].bias,
            );
        }
    }
}
