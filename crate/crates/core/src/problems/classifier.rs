//! Logistic regression and one-hidden-layer MLPs with hand-written
//! backpropagation, trained by plain mini-batch gradient descent.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{check_dim, Dataset, Evaluation, GradientOracle, ProblemError};
use crate::numerics::{Point, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation value.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Fully connected layer; `weights` has shape `[outputs, inputs]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Point,
    pub bias: Point,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Point::with_shape(vec![0.0; inputs * outputs], vec![outputs, inputs])
                .expect("consistent shape"),
            bias: Point::zeros(outputs),
        }
    }

    fn random(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        let std = (1.0 / inputs as f64).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| std * rng.standard_normal())
            .collect();
        Self {
            weights: Point::with_shape(w, vec![outputs, inputs]).expect("consistent shape"),
            bias: Point::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n_in = self.inputs();
        let w = self.weights.as_slice();
        (0..self.outputs())
            .map(|o| {
                let row = &w[o * n_in..(o + 1) * n_in];
                row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.bias[o]
            })
            .collect()
    }

    /// `Wᵀ δ`
    fn backward_input(&self, delta: &[f64]) -> Vec<f64> {
        let n_in = self.inputs();
        let w = self.weights.as_slice();
        let mut out = vec![0.0; n_in];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (slot, &wi) in out.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                *slot += wi * d;
            }
        }
        out
    }
}

/// A trained (or freshly initialized) toy classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyClassifier {
    pub kind: ClassifierKind,
    pub activation: Activation,
    /// One layer for logistic regression, two for the MLP.
    pub layers: Vec<Dense>,
}

struct Forward {
    /// Input to every layer, the network input first.
    inputs: Vec<Vec<f64>>,
    /// Hidden pre-activations (MLP only).
    hidden_pre: Vec<f64>,
    logits: Vec<f64>,
}

fn log_softmax_loss(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    // Mass off the label, summed directly so confident predictions keep
    // their tiny loss and gradient instead of cancelling against 1.
    let others: f64 = exps
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label)
        .map(|(_, e)| e)
        .sum();
    let loss = if logits[label] == max {
        others.ln_1p()
    } else {
        sum.ln() + max - logits[label]
    };
    let mut dlogits: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    dlogits[label] = -others / sum;
    (loss, dlogits)
}

impl ToyClassifier {
    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs()
    }

    /// Zero-weight model; every input gets uniform logits.
    pub fn zeros(kind: ClassifierKind, dim: usize, hidden: usize, n_classes: usize) -> Self {
        let layers = match kind {
            ClassifierKind::Logistic => vec![Dense::zeros(dim, n_classes)],
            ClassifierKind::Mlp => vec![Dense::zeros(dim, hidden), Dense::zeros(hidden, n_classes)],
        };
        Self {
            kind,
            activation: Activation::Tanh,
            layers,
        }
    }

    fn forward(&self, x: &[f64]) -> Forward {
        match self.kind {
            ClassifierKind::Logistic => Forward {
                inputs: vec![x.to_vec()],
                hidden_pre: Vec::new(),
                logits: self.layers[0].forward(x),
            },
            ClassifierKind::Mlp => {
                let pre = self.layers[0].forward(x);
                let h: Vec<f64> = pre.iter().map(|&p| self.activation.apply(p)).collect();
                let logits = self.layers[1].forward(&h);
                Forward {
                    inputs: vec![x.to_vec(), h],
                    hidden_pre: pre,
                    logits,
                }
            }
        }
    }

    pub fn logits(&self, x: &Point) -> Vec<f64> {
        self.forward(x.as_slice()).logits
    }

    /// Arg-max class; ties resolve to the lowest index.
    pub fn predict(&self, x: &Point) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        best
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data
            .inputs
            .iter()
            .zip(&data.labels)
            .filter(|(x, &y)| self.predict(x) == y)
            .count();
        hits as f64 / data.len() as f64
    }

    /// Cross-entropy loss and its gradient with respect to the input.
    pub fn loss_and_input_gradient(&self, x: &Point, label: usize) -> (f64, Point) {
        let fwd = self.forward(x.as_slice());
        let (loss, dlogits) = log_softmax_loss(&fwd.logits, label);
        let grad = match self.kind {
            ClassifierKind::Logistic => self.layers[0].backward_input(&dlogits),
            ClassifierKind::Mlp => {
                let dh = self.layers[1].backward_input(&dlogits);
                let dpre: Vec<f64> = dh
                    .iter()
                    .zip(&fwd.hidden_pre)
                    .map(|(g, &p)| g * self.activation.derivative(p))
                    .collect();
                self.layers[0].backward_input(&dpre)
            }
        };
        (loss, x.like(grad))
    }

    /// Accumulates parameter gradients of the cross-entropy at `(x, label)`
    /// into `grads` (same layout as `self.layers`); returns the loss.
    fn accumulate_param_gradient(&self, x: &[f64], label: usize, grads: &mut [Dense]) -> f64 {
        let fwd = self.forward(x);
        let (loss, dlogits) = log_softmax_loss(&fwd.logits, label);
        let last = self.layers.len() - 1;
        let mut delta = dlogits;
        for layer_idx in (0..=last).rev() {
            let input = &fwd.inputs[layer_idx];
            let layer_grad = &mut grads[layer_idx];
            let n_in = input.len();
            {
                let gw = layer_grad.weights.as_mut_slice();
                for (o, &d) in delta.iter().enumerate() {
                    for (slot, &xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                        *slot += d * xi;
                    }
                }
            }
            for (slot, &d) in layer_grad.bias.as_mut_slice().iter_mut().zip(&delta) {
                *slot += d;
            }
            if layer_idx > 0 {
                let dh = self.layers[layer_idx].backward_input(&delta);
                delta = dh
                    .iter()
                    .zip(&fwd.hidden_pre)
                    .map(|(g, &p)| g * self.activation.derivative(p))
                    .collect();
            }
        }
        loss
    }

    /// Every weight and bias, flattened in layer order.
    pub fn flat_parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Hidden width; ignored for logistic regression.
    pub hidden: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.5,
            hidden: 32,
            activation: Activation::Tanh,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub epochs: usize,
}

/// Mini-batch gradient descent on the mean cross-entropy.
///
/// Hidden weights start Gaussian with variance `1/fan_in`; the output layer
/// starts at zero, so an untrained model predicts uniform probabilities.
pub fn train_classifier(
    kind: ClassifierKind,
    data: &Dataset,
    hyper: &TrainHyper,
) -> Result<(ToyClassifier, TrainReport), ProblemError> {
    if data.is_empty() {
        return Err(ProblemError::EmptyDataset);
    }
    if hyper.batch_size == 0 || !(hyper.learning_rate > 0.0) {
        return Err(ProblemError::InvalidParameter(
            "batch_size and learning_rate must be positive".into(),
        ));
    }
    if kind == ClassifierKind::Mlp && hyper.hidden == 0 {
        return Err(ProblemError::InvalidParameter("hidden width must be positive".into()));
    }
    if let Some(&bad) = data.labels.iter().find(|&&y| y >= data.n_classes) {
        return Err(ProblemError::InvalidParameter(format!(
            "label {bad} out of range for {} classes",
            data.n_classes
        )));
    }
    let dim = data.dim();
    let k = data.n_classes;
    let mut rng = SeededRng::new(hyper.seed, 0x7261_696e);
    let layers = match kind {
        ClassifierKind::Logistic => vec![Dense::zeros(dim, k)],
        ClassifierKind::Mlp => vec![
            Dense::random(dim, hyper.hidden, &mut rng),
            Dense::zeros(hyper.hidden, k),
        ],
    };
    let mut model = ToyClassifier {
        kind,
        activation: hyper.activation,
        layers,
    };

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut final_loss = f64::NAN;
    for epoch in 0..hyper.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let mut grads: Vec<Dense> = model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect();
            for &i in batch {
                epoch_loss +=
                    model.accumulate_param_gradient(data.inputs[i].as_slice(), data.labels[i], &mut grads);
            }
            let step = hyper.learning_rate / batch.len() as f64;
            for (layer, g) in model.layers.iter_mut().zip(&grads) {
                for (w, gw) in layer.weights.as_mut_slice().iter_mut().zip(g.weights.iter()) {
                    *w -= step * gw;
                }
                for (b, gb) in layer.bias.as_mut_slice().iter_mut().zip(g.bias.iter()) {
                    *b -= step * gb;
                }
            }
        }
        final_loss = epoch_loss / data.len() as f64;
        let params_finite = model
            .layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.is_finite());
        if !final_loss.is_finite() || !params_finite {
            return Err(ProblemError::Divergence {
                epoch,
                loss: final_loss,
            });
        }
    }
    if hyper.epochs == 0 {
        final_loss = data
            .inputs
            .iter()
            .zip(&data.labels)
            .map(|(x, &y)| model.loss_and_input_gradient(x, y).0)
            .sum::<f64>()
            / data.len() as f64;
    }
    let report = TrainReport {
        final_loss,
        train_accuracy: model.accuracy(data),
        epochs: hyper.epochs,
    };
    Ok((model, report))
}

/// Untargeted attack objective: cross-entropy of `model` at the query point
/// against the true label.
#[derive(Debug, Clone)]
pub struct ClassifierOracle {
    model: Arc<ToyClassifier>,
    label: usize,
}

impl ClassifierOracle {
    pub fn label(&self) -> usize {
        self.label
    }

    pub fn model(&self) -> &ToyClassifier {
        &self.model
    }
}

pub fn classifier_attack_oracle(
    model: Arc<ToyClassifier>,
    label: usize,
) -> Result<ClassifierOracle, ProblemError> {
    if label >= model.n_classes() {
        return Err(ProblemError::InvalidParameter(format!(
            "label {label} out of range for {} classes",
            model.n_classes()
        )));
    }
    Ok(ClassifierOracle { model, label })
}

impl GradientOracle for ClassifierOracle {
    fn dim(&self) -> usize {
        self.model.input_dim()
    }

    fn description(&self) -> String {
        format!(
            "{:?} classifier cross-entropy (label {})",
            self.model.kind, self.label
        )
    }

    fn eval(&mut self, z: &Point) -> Result<Evaluation, ProblemError> {
        check_dim(self.dim(), z)?;
        let (loss, gradient) = self.model.loss_and_input_gradient(z, self.label);
        if !loss.is_finite() {
            return Err(ProblemError::NonFinite { what: "loss" });
        }
        if !gradient.is_finite() {
            return Err(ProblemError::NonFinite { what: "gradient" });
        }
        Ok(Evaluation { loss, gradient })
    }

    fn objective(&self, z: &Point) -> Option<f64> {
        Some(self.model.loss_and_input_gradient(z, self.label).0)
    }
}
