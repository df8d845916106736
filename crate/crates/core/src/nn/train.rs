//! SGD training with momentum and a step-decay schedule, plus the analytic
//! backpropagation used both by training and by the gradient-check oracles.

use crate::error::{Error, Result};
use crate::nn::loss::{accuracy_from_logits, BatchLoss};
use crate::nn::{LogitBatch, Model};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Epochs, learning rate and step-decay milestones for one training phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub base_lr: f64,
    /// Epoch indices at which the learning rate is multiplied by
    /// `decay_factor`; strictly increasing, all below `epochs`.
    pub decay_milestones: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        // step decay at 50% and 75% of the epoch budget
        TrainSchedule {
            epochs: 30,
            base_lr: 0.01,
            decay_milestones: vec![15, 22],
            decay_factor: 0.1,
            batch_size: 32,
            momentum: 0.9,
        }
    }
}

impl TrainSchedule {
    /// Default schedule with decay at 50% and 75% of `epochs`.
    pub fn with_epochs(epochs: usize) -> Self {
        let mut s = TrainSchedule {
            epochs,
            ..TrainSchedule::default()
        };
        s.decay_milestones = if epochs >= 4 {
            vec![epochs / 2, epochs * 3 / 4]
        } else {
            vec![]
        };
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_lr <= 0.0 || !self.base_lr.is_finite() {
            return Err(Error::argument(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if !(0.0 < self.decay_factor && self.decay_factor < 1.0) {
            return Err(Error::argument(format!(
                "decay_factor must be in (0, 1), got {}",
                self.decay_factor
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::argument("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::argument(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        for pair in self.decay_milestones.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::argument(
                    "decay_milestones must be strictly increasing",
                ));
            }
        }
        if let Some(&last) = self.decay_milestones.last() {
            if last >= self.epochs {
                return Err(Error::argument(format!(
                    "decay milestone {last} not below epochs {}",
                    self.epochs
                )));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_milestones.iter().filter(|&&m| m <= epoch).count();
        self.base_lr * self.decay_factor.powi(decays as i32)
    }
}

/// Per-parameter gradients, shape-congruent with a model's parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    fn zeros_like(model: &Model) -> Self {
        Gradients {
            weights: model.weights().iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: model.biases().iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        let w = self
            .weights
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        self.biases
            .iter()
            .flat_map(|g| g.iter())
            .fold(w, |m, &v| m.max(v.abs()))
    }
}

/// Backpropagate `d(loss)/d(logits)` through cached activations.
fn backprop(model: &Model, acts: &[Array2<f64>], logit_grad: Array2<f64>) -> Gradients {
    let layers = model.weights().len();
    let mut grads = Gradients::zeros_like(model);
    let mut delta = logit_grad;
    for l in (0..layers).rev() {
        grads.weights[l] = acts[l].t().dot(&delta);
        grads.biases[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut prev = delta.dot(&model.weights()[l].t());
            let act = model.activation();
            prev.zip_mut_with(&acts[l], |d, &a| *d *= act.deriv_from_output(a));
            delta = prev;
        }
    }
    grads
}

/// Mean loss of `model` on the given rows of `inputs`.
pub fn loss_value<L: BatchLoss>(
    model: &Model,
    inputs: ArrayView2<'_, f64>,
    rows: &[usize],
    loss: &L,
) -> Result<f64> {
    let batch = inputs.select(Axis(0), rows);
    let logits = model.forward(batch.view())?;
    Ok(loss.loss_and_grad(&logits, rows).0)
}

/// Analytic gradient of the mean loss over the given rows.
pub fn gradient<L: BatchLoss>(
    model: &Model,
    inputs: ArrayView2<'_, f64>,
    rows: &[usize],
    loss: &L,
) -> Result<Gradients> {
    if rows.is_empty() {
        return Err(Error::argument("gradient over an empty batch"));
    }
    let batch = inputs.select(Axis(0), rows);
    let acts = model.forward_cached(batch.view())?;
    let logits = LogitBatch::new(acts.last().unwrap().clone())?;
    let (_, logit_grad) = loss.loss_and_grad(&logits, rows);
    Ok(backprop(model, &acts, logit_grad))
}

/// Stop training once the full-set loss has not improved by at least
/// `min_improvement` for `patience` consecutive epochs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub min_improvement: f64,
    pub patience: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    pub early_stop: Option<EarlyStop>,
}

/// Per-epoch trace of a completed training phase.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: Model,
    /// Full-set mean loss after each completed epoch.
    pub epoch_loss: Vec<f64>,
    /// Full-set accuracy after each completed epoch.
    pub epoch_accuracy: Vec<f64>,
}

/// Minibatch SGD with momentum. Deterministic for a fixed seed: the shuffle
/// order, update order and all arithmetic are single-threaded.
pub fn train_sgd<L: BatchLoss>(
    model: &Model,
    inputs: ArrayView2<'_, f64>,
    loss: &mut L,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<TrainReport> {
    train_sgd_with_options(model, inputs, loss, schedule, seed, TrainOptions::default())
}

pub fn train_sgd_with_options<L: BatchLoss>(
    model: &Model,
    inputs: ArrayView2<'_, f64>,
    loss: &mut L,
    schedule: &TrainSchedule,
    seed: u64,
    options: TrainOptions,
) -> Result<TrainReport> {
    schedule.validate()?;
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::argument("training set is empty"));
    }
    if loss.labels().len() != n {
        return Err(Error::Dimension {
            context: "train_sgd labels",
            expected: n,
            actual: loss.labels().len(),
        });
    }

    let mut m = model.clone();
    let mut velocity = Gradients::zeros_like(&m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all_rows: Vec<usize> = (0..n).collect();
    let mut epoch_loss = Vec::new();
    let mut epoch_accuracy = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut stale_epochs = 0usize;

    for epoch in 0..schedule.epochs {
        loss.on_epoch_start(epoch);
        let lr = schedule.lr_at(epoch);
        let mut order = all_rows.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(schedule.batch_size) {
            let batch = inputs.select(Axis(0), chunk);
            let acts = m.forward_cached(batch.view()).map_err(|e| Error::Training {
                epoch,
                detail: e.to_string(),
            })?;
            let logits = LogitBatch::new(acts.last().unwrap().clone()).map_err(|_| {
                Error::Training {
                    epoch,
                    detail: "non-finite logits".into(),
                }
            })?;
            let (batch_loss, logit_grad) = loss.loss_and_grad(&logits, chunk);
            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    detail: "loss became non-finite".into(),
                });
            }
            let grads = backprop(&m, &acts, logit_grad);
            for l in 0..m.weights().len() {
                velocity.weights[l] *= schedule.momentum;
                velocity.weights[l] += &grads.weights[l];
                velocity.biases[l] *= schedule.momentum;
                velocity.biases[l] += &grads.biases[l];
                m.weights_mut()[l].scaled_add(-lr, &velocity.weights[l]);
                m.biases_mut()[l].scaled_add(-lr, &velocity.biases[l]);
            }
        }
        m.check_finite().map_err(|_| Error::Training {
            epoch,
            detail: "parameters became non-finite".into(),
        })?;

        let logits = m.forward(inputs)?;
        let (full_loss, _) = loss.loss_and_grad(&logits, &all_rows);
        epoch_loss.push(full_loss);
        epoch_accuracy.push(accuracy_from_logits(&logits, loss.labels()));

        if let Some(es) = options.early_stop {
            if full_loss < best_loss - es.min_improvement {
                best_loss = full_loss;
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if stale_epochs >= es.patience {
                    break;
                }
            }
        }
    }

    Ok(TrainReport {
        model: m,
        epoch_loss,
        epoch_accuracy,
    })
}
