//! Minimal dense feed-forward network engine.
//!
//! Models are plain parameter containers: per-layer weight matrices of shape
//! `(in_dim, out_dim)` and bias vectors, with the configured activation on
//! every hidden layer and raw logits at the output. Everything is `f64` and
//! all randomness is explicitly seeded.

mod loss;
mod snapshot;
mod train;

pub use loss::{cross_entropy, kl_divergence, softmax_with_temperature, BatchLoss, HardLabelLoss};
pub use snapshot::{load_model, save_model};
pub use train::{
    gradient, loss_value, train_sgd, train_sgd_with_options, EarlyStop, Gradients, TrainOptions,
    TrainReport, TrainSchedule,
};

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Activation applied to hidden layers. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
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

    /// Derivative expressed in terms of the activation output.
    fn deriv_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// A batch of raw (unnormalized) logits, one row per sample.
#[derive(Debug, Clone)]
pub struct LogitBatch {
    values: Array2<f64>,
}

impl LogitBatch {
    /// Wrap a logit matrix, rejecting non-finite entries.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "logits" });
        }
        Ok(LogitBatch { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn batch_size(&self) -> usize {
        self.values.nrows()
    }

    pub fn class_count(&self) -> usize {
        self.values.ncols()
    }
}

/// Dense feed-forward classifier.
#[derive(Debug, Clone)]
pub struct Model {
    layer_dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
}

impl Model {
    /// All-zero parameters for the given architecture.
    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        Self::validate_dims(layer_dims)?;
        let weights = layer_pairs(layer_dims)
            .map(|(i, o)| Array2::zeros((i, o)))
            .collect();
        let biases = layer_pairs(layer_dims)
            .map(|(_, o)| Array1::zeros(o))
            .collect();
        Ok(Model {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// Seeded init: per-layer uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`,
    /// zero biases.
    pub fn seeded(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        Self::validate_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (fan_in, fan_out) in layer_pairs(layer_dims) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| dist.sample(&mut rng));
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Model {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// Build from explicit parameters; shapes must match `layer_dims`.
    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        Self::validate_dims(&layer_dims)?;
        let layers = layer_dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::argument(format!(
                "expected {layers} weight/bias layers, got {}/{}",
                weights.len(),
                biases.len()
            )));
        }
        for (l, (fan_in, fan_out)) in layer_pairs(&layer_dims).enumerate() {
            if weights[l].dim() != (fan_in, fan_out) {
                return Err(Error::argument(format!(
                    "weight layer {l} has shape {:?}, expected ({fan_in}, {fan_out})",
                    weights[l].dim()
                )));
            }
            if biases[l].len() != fan_out {
                return Err(Error::argument(format!(
                    "bias layer {l} has length {}, expected {fan_out}",
                    biases[l].len()
                )));
            }
        }
        let model = Model {
            layer_dims,
            weights,
            biases,
            activation,
        };
        model.check_finite()?;
        Ok(model)
    }

    fn validate_dims(layer_dims: &[usize]) -> Result<()> {
        if layer_dims.len() < 2 {
            return Err(Error::argument(
                "layer_dims needs at least input and output dims",
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::argument("layer_dims entries must be positive"));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Two models are structurally compatible when their layer dims agree.
    pub fn compatible_with(&self, other: &Model) -> bool {
        self.layer_dims == other.layer_dims
    }

    /// Bitwise parameter equality (exact `f64` bit patterns).
    pub fn params_bitwise_eq(&self, other: &Model) -> bool {
        self.layer_dims == other.layer_dims
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()))
            && self
                .biases
                .iter()
                .zip(&other.biases)
                .all(|(a, b)| a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()))
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        let ok = self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: "model parameters",
            })
        }
    }

    /// Raw logits for a batch of inputs, one row per sample.
    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<LogitBatch> {
        let acts = self.forward_cached(inputs)?;
        LogitBatch::new(acts.into_iter().next_back().unwrap())
    }

    /// Forward pass keeping every layer's post-activation output
    /// (`result[0]` is the input, `result.last()` the raw logits).
    pub(crate) fn forward_cached(&self, inputs: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                context: "forward inputs",
                expected: self.input_dim(),
                actual: inputs.ncols(),
            });
        }
        let layers = self.weights.len();
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(layers + 1);
        acts.push(inputs.to_owned());
        for l in 0..layers {
            let mut z = acts[l].dot(&self.weights[l]);
            z += &self.biases[l].view().insert_axis(Axis(0));
            if l + 1 < layers {
                z.mapv_inplace(|v| self.activation.apply(v));
            }
            acts.push(z);
        }
        if acts.last().unwrap().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "forward" });
        }
        Ok(acts)
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub(crate) fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }
}

fn layer_pairs(dims: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
    dims.windows(2).map(|w| (w[0], w[1]))
}

/// Index of the largest entry in a row; ties resolve to the lowest index.
pub fn argmax_tie_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = Model::zeros(&[4, 3, 2], Activation::Relu).unwrap();
        let x = array![[1.0, -2.0, 3.5, 0.25], [0.0, 0.0, 1.0, 9.0]];
        let logits = m.forward(x.view()).unwrap();
        assert!(logits.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let w = Array2::eye(3);
        let b = Array1::zeros(3);
        let m = Model::from_parts(vec![3, 3], vec![w], vec![b], Activation::Relu).unwrap();
        let x = array![[0.5, -1.25, 7.0]];
        let logits = m.forward(x.view()).unwrap();
        // single-layer models have no hidden activation, so negatives survive
        assert_eq!(logits.values(), &x);
    }

    #[test]
    fn two_three_two_matches_hand_computation() {
        // z0 = x.W0 + b0 = [-0.4, -4.2, 1.55]; relu -> [0, 0, 1.55]
        // logits = relu(z0).W1 + b1 = [-3.05, 0.725]
        let w0 = array![[0.5, -1.0, 0.25], [1.5, 2.0, -0.75]];
        let b0 = array![0.1, -0.2, 0.3];
        let w1 = array![[1.0, -0.5], [0.25, 0.75], [-2.0, 0.5]];
        let b1 = array![0.05, -0.05];
        let m = Model::from_parts(vec![2, 3, 2], vec![w0, w1], vec![b0, b1], Activation::Relu)
            .unwrap();
        let x = array![[2.0, -1.0]];
        let logits = m.forward(x.view()).unwrap();
        assert_abs_diff_eq!(logits.values()[[0, 0]], -3.05, epsilon = 1e-12);
        assert_abs_diff_eq!(logits.values()[[0, 1]], 0.725, epsilon = 1e-12);
    }

    #[test]
    fn tanh_hidden_matches_scalar_oracle() {
        let m = Model::seeded(&[2, 3, 2], Activation::Tanh, 11).unwrap();
        let x = array![[0.3, -1.1]];
        let logits = m.forward(x.view()).unwrap();
        // scalar re-computation of the same forward pass
        let mut hidden = [0.0f64; 3];
        for j in 0..3 {
            let mut z = m.biases()[0][j];
            for i in 0..2 {
                z += x[[0, i]] * m.weights()[0][[i, j]];
            }
            hidden[j] = z.tanh();
        }
        for k in 0..2 {
            let mut z = m.biases()[1][k];
            for (j, h) in hidden.iter().enumerate() {
                z += h * m.weights()[1][[j, k]];
            }
            assert_abs_diff_eq!(logits.values()[[0, k]], z, epsilon = 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = Model::zeros(&[4, 2], Activation::Relu).unwrap();
        let x = array![[1.0, 2.0, 3.0]];
        match m.forward(x.view()) {
            Err(Error::Dimension {
                expected, actual, ..
            }) => {
                assert_eq!(expected, 4);
                assert_eq!(actual, 3);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn clone_forward_is_bitwise_identical() {
        let m = Model::seeded(&[5, 8, 3], Activation::Relu, 99).unwrap();
        let c = m.clone();
        assert!(m.params_bitwise_eq(&c));
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i as f64 - 1.5) * (j as f64 + 0.5));
        let a = m.forward(x.view()).unwrap();
        let b = c.forward(x.view()).unwrap();
        assert!(a
            .values()
            .iter()
            .zip(b.values().iter())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn seeded_init_is_deterministic_and_seed_sensitive() {
        let a = Model::seeded(&[3, 4, 2], Activation::Relu, 7).unwrap();
        let b = Model::seeded(&[3, 4, 2], Activation::Relu, 7).unwrap();
        let c = Model::seeded(&[3, 4, 2], Activation::Relu, 8).unwrap();
        assert!(a.params_bitwise_eq(&b));
        assert!(!a.params_bitwise_eq(&c));
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax_tie_lowest(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(argmax_tie_lowest(&[0.0, 2.0, 2.0]), 1);
        assert_eq!(argmax_tie_lowest(&[-1.0, 0.5, 3.0]), 2);
    }
}
