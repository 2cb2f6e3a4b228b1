//! Minimal fully-connected classifier: ReLU hidden layers, sigmoid
//! output, reverse-mode gradients of any registered loss with respect
//! to every weight.
//!
//! The architecture family is fixed on purpose; this is not a general
//! autodiff engine. The backward pass chains the loss's per-prediction
//! gradient through the sigmoid and the dense layers.

use crate::confusion::LabeledBatch;
use crate::scores::Loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("network needs at least an input and an output width")]
    TooFewLayers,
    #[error("output width must be 1, got {0}")]
    OutputWidthNotOne(usize),
    #[error("layer widths must be positive")]
    ZeroWidth,
    #[error("input has {got} features, network expects {want}")]
    InputWidthMismatch { want: usize, got: usize },
    #[error("weights are shaped for widths {0:?}, spec has {1:?}")]
    WeightShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("inputs and labels have different lengths ({0} vs {1})")]
    LabelLengthMismatch(usize, usize),
}

/// Layer widths from input to the single sigmoid output. Hidden layers
/// use ReLU; `[d, 1]` (no hidden layer) is allowed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layer_widths: Vec<usize>,
}

impl NetworkSpec {
    pub fn new(layer_widths: Vec<usize>) -> Result<Self, NetworkError> {
        if layer_widths.len() < 2 {
            return Err(NetworkError::TooFewLayers);
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(NetworkError::ZeroWidth);
        }
        let last = *layer_widths.last().unwrap();
        if last != 1 {
            return Err(NetworkError::OutputWidthNotOne(last));
        }
        Ok(Self { layer_widths })
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    /// Number of dense layers (hidden layers plus the output layer).
    pub fn layer_count(&self) -> usize {
        self.layer_widths.len() - 1
    }
}

/// One dense layer, row-major `out x in` weights plus a bias per output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// All weights of a network, shaped per its spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub layers: Vec<Layer>,
}

/// Checkpoint format version; bump when the layout changes.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializable weight checkpoint: shapes plus row-major data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub layer_widths: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl WeightSet {
    /// Seeded initialization: He-uniform for the ReLU layers,
    /// Glorot-uniform for the sigmoid output layer.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layer_count());
        for l in 0..spec.layer_count() {
            let fan_in = spec.layer_widths[l];
            let fan_out = spec.layer_widths[l + 1];
            let is_output = l + 1 == spec.layer_count();
            let limit = if is_output {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            layers.push(Layer {
                rows: fan_out,
                cols: fan_in,
                weights,
                biases: vec![0.0; fan_out],
            });
        }
        Self { layers }
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layers = (0..spec.layer_count())
            .map(|l| Layer {
                rows: spec.layer_widths[l + 1],
                cols: spec.layer_widths[l],
                weights: vec![0.0; spec.layer_widths[l] * spec.layer_widths[l + 1]],
                biases: vec![0.0; spec.layer_widths[l + 1]],
            })
            .collect();
        Self { layers }
    }

    pub fn matches(&self, spec: &NetworkSpec) -> bool {
        self.layers.len() == spec.layer_count()
            && self.layers.iter().enumerate().all(|(l, layer)| {
                layer.rows == spec.layer_widths[l + 1]
                    && layer.cols == spec.layer_widths[l]
                    && layer.weights.len() == layer.rows * layer.cols
                    && layer.biases.len() == layer.rows
            })
    }

    fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.cols).collect();
        if let Some(last) = self.layers.last() {
            w.push(last.rows);
        }
        w
    }

    pub fn checkpoint(&self, spec: &NetworkSpec) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            layer_widths: spec.layer_widths.clone(),
            layers: self.layers.clone(),
        }
    }

    /// Flat view used by the optimizer and by finite-difference checks.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut idx = 0;
        for layer in &mut self.layers {
            for w in &mut layer.weights {
                f(idx, w);
                idx += 1;
            }
            for b in &mut layer.biases {
                f(idx, b);
                idx += 1;
            }
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.biases);
        }
        out
    }
}

/// Loss choice plus optional L2 penalty on the weight matrices
/// (biases are not penalized).
pub struct ObjectiveSpec {
    pub loss: Box<dyn Loss>,
    pub lambda: f64,
    pub regularizer: Regularizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    None,
    L2,
}

impl ObjectiveSpec {
    pub fn unregularized(loss: Box<dyn Loss>) -> Self {
        Self {
            loss,
            lambda: 0.0,
            regularizer: Regularizer::None,
        }
    }

    fn penalty(&self, weights: &WeightSet) -> f64 {
        match self.regularizer {
            Regularizer::None => 0.0,
            Regularizer::L2 => {
                self.lambda
                    * weights
                        .layers
                        .iter()
                        .flat_map(|l| l.weights.iter())
                        .map(|w| w * w)
                        .sum::<f64>()
            }
        }
    }
}

fn sigmoid(h: f64) -> f64 {
    1.0 / (1.0 + (-h).exp())
}

fn check_shapes(
    spec: &NetworkSpec,
    weights: &WeightSet,
    inputs: &[Vec<f64>],
) -> Result<(), NetworkError> {
    if !weights.matches(spec) {
        return Err(NetworkError::WeightShapeMismatch(
            weights.widths(),
            spec.layer_widths.clone(),
        ));
    }
    for row in inputs {
        if row.len() != spec.input_width() {
            return Err(NetworkError::InputWidthMismatch {
                want: spec.input_width(),
                got: row.len(),
            });
        }
    }
    Ok(())
}

/// Forward pass: returns one prediction in `(0, 1)` per input row.
pub fn forward(
    spec: &NetworkSpec,
    weights: &WeightSet,
    inputs: &[Vec<f64>],
) -> Result<Vec<f64>, NetworkError> {
    check_shapes(spec, weights, inputs)?;
    Ok(inputs
        .iter()
        .map(|x| forward_one(weights, x, None))
        .collect())
}

/// Forward for one sample, optionally recording post-activation values
/// of every layer (input included) for the backward pass.
fn forward_one(weights: &WeightSet, x: &[f64], mut tape: Option<&mut Vec<Vec<f64>>>) -> f64 {
    if let Some(tape) = tape.as_deref_mut() {
        tape.push(x.to_vec());
    }
    let mut current = x.to_vec();
    let last = weights.layers.len() - 1;
    for (l, layer) in weights.layers.iter().enumerate() {
        let mut next = vec![0.0; layer.rows];
        for r in 0..layer.rows {
            let mut z = layer.biases[r];
            let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
            for (w, xi) in row.iter().zip(&current) {
                z += w * xi;
            }
            // ReLU derivative at exactly 0 is taken as 0.
            next[r] = if l == last { sigmoid(z) } else { z.max(0.0) };
        }
        if let Some(tape) = tape.as_deref_mut() {
            tape.push(next.clone());
        }
        current = next;
    }
    current[0]
}

/// Loss plus penalty at the given weights.
pub fn objective_value(
    spec: &NetworkSpec,
    weights: &WeightSet,
    inputs: &[Vec<f64>],
    labels: &[u8],
    objective: &ObjectiveSpec,
) -> Result<f64, NetworkError> {
    if inputs.len() != labels.len() {
        return Err(NetworkError::LabelLengthMismatch(inputs.len(), labels.len()));
    }
    let predictions = forward(spec, weights, inputs)?;
    let batch = LabeledBatch::new(predictions, labels.to_vec())
        .expect("sigmoid outputs lie in (0, 1)");
    Ok(objective.loss.value(&batch) + objective.penalty(weights))
}

/// Reverse-mode gradient of [`objective_value`] with respect to every
/// weight and bias, shaped like the weights.
pub fn objective_gradient(
    spec: &NetworkSpec,
    weights: &WeightSet,
    inputs: &[Vec<f64>],
    labels: &[u8],
    objective: &ObjectiveSpec,
) -> Result<WeightSet, NetworkError> {
    if inputs.len() != labels.len() {
        return Err(NetworkError::LabelLengthMismatch(inputs.len(), labels.len()));
    }
    check_shapes(spec, weights, inputs)?;

    // Forward with tapes, one per sample, then the loss's per-prediction
    // gradient drives the shared backward pass.
    let mut tapes: Vec<Vec<Vec<f64>>> = Vec::with_capacity(inputs.len());
    let mut predictions = Vec::with_capacity(inputs.len());
    for x in inputs {
        let mut tape = Vec::with_capacity(weights.layers.len() + 1);
        predictions.push(forward_one(weights, x, Some(&mut tape)));
        tapes.push(tape);
    }
    let batch = LabeledBatch::new(predictions.clone(), labels.to_vec())
        .expect("sigmoid outputs lie in (0, 1)");
    let dl_dy = objective.loss.prediction_gradient(&batch);

    let mut grad = WeightSet::zeros(spec);
    for (i, tape) in tapes.iter().enumerate() {
        let y_hat = predictions[i];
        // delta at the output: dL/dy * sigma'(z) with sigma' = y(1 - y).
        let mut delta = vec![dl_dy[i] * y_hat * (1.0 - y_hat)];
        for l in (0..weights.layers.len()).rev() {
            let layer = &weights.layers[l];
            let activations = &tape[l];
            let g = &mut grad.layers[l];
            for r in 0..layer.rows {
                g.biases[r] += delta[r];
                for c in 0..layer.cols {
                    g.weights[r * layer.cols + c] += delta[r] * activations[c];
                }
            }
            if l > 0 {
                // Propagate through the layer, gating by the ReLU mask of
                // the previous post-activation values.
                let mut prev = vec![0.0; layer.cols];
                for c in 0..layer.cols {
                    if tape[l][c] > 0.0 {
                        let mut acc = 0.0;
                        for r in 0..layer.rows {
                            acc += delta[r] * layer.weights[r * layer.cols + c];
                        }
                        prev[c] = acc;
                    }
                }
                delta = prev;
            }
        }
    }

    if objective.regularizer == Regularizer::L2 && objective.lambda > 0.0 {
        for (g, w) in grad.layers.iter_mut().zip(&weights.layers) {
            for (gw, ww) in g.weights.iter_mut().zip(&w.weights) {
                *gw += 2.0 * objective.lambda * ww;
            }
        }
    }
    Ok(grad)
}

/// Adam optimizer over a [`WeightSet`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(learning_rate: f64, parameter_count: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; parameter_count],
            v: vec![0.0; parameter_count],
            t: 0,
        }
    }

    pub fn step(&mut self, weights: &mut WeightSet, gradient: &WeightSet) {
        self.t += 1;
        let g = gradient.params();
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (m, v) = (&mut self.m, &mut self.v);
        let (lr, b1, b2, eps) = (self.learning_rate, self.beta1, self.beta2, self.epsilon);
        weights.for_each_param_mut(|idx, w| {
            m[idx] = b1 * m[idx] + (1.0 - b1) * g[idx];
            v[idx] = b2 * v[idx] + (1.0 - b2) * g[idx] * g[idx];
            let m_hat = m[idx] / bc1;
            let v_hat = v[idx] / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
}
