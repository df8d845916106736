//! Loss primitives: temperature softmax, cross entropy, KL divergence, and
//! the batch-loss interface the SGD trainer drives.

use crate::error::{Error, Result};
use crate::nn::LogitBatch;
use ndarray::{Array2, ArrayView2, Axis};

/// Floor applied to the second argument of the KL divergence so a zero
/// probability never produces `log(0)`.
pub const KL_FLOOR: f64 = 1e-12;

/// Row-wise softmax of `logits / t`, computed with max subtraction.
pub fn softmax_with_temperature(logits: &LogitBatch, t: f64) -> Result<Array2<f64>> {
    if !(t > 0.0) {
        return Err(Error::argument(format!(
            "temperature must be positive, got {t}"
        )));
    }
    let mut out = logits.values().mapv(|v| v / t);
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    Ok(out)
}

/// Row-wise log-softmax of `logits / t` (max-subtracted, never -inf for
/// finite logits unless the exponent underflows the whole row).
pub(crate) fn log_softmax_with_temperature(logits: &LogitBatch, t: f64) -> Array2<f64> {
    let mut out = logits.values().mapv(|v| v / t);
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        row.mapv_inplace(|v| v - log_sum);
    }
    out
}

/// Mean over the batch of `-log softmax(logits)[true class]`.
pub fn cross_entropy(logits: &LogitBatch, labels: &[usize]) -> Result<f64> {
    if labels.len() != logits.batch_size() {
        return Err(Error::Dimension {
            context: "cross_entropy labels",
            expected: logits.batch_size(),
            actual: labels.len(),
        });
    }
    let classes = logits.class_count();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::argument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let log_probs = log_softmax_with_temperature(logits, 1.0);
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -log_probs[[i, y]])
        .sum();
    Ok(total / labels.len() as f64)
}

/// Mean over rows of `sum_j p_j * log(p_j / q_j)`, with the `0 log 0 = 0`
/// convention and `q` floored at [`KL_FLOOR`].
pub fn kl_divergence(p: ArrayView2<'_, f64>, q: ArrayView2<'_, f64>) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension {
            context: "kl_divergence shapes",
            expected: p.len(),
            actual: q.len(),
        });
    }
    validate_distribution(p, "kl_divergence p")?;
    validate_distribution(q, "kl_divergence q")?;
    let mut total = 0.0;
    for (prow, qrow) in p.rows().into_iter().zip(q.rows()) {
        for (&pj, &qj) in prow.iter().zip(qrow.iter()) {
            if pj > 0.0 {
                total += pj * (pj.ln() - qj.max(KL_FLOOR).ln());
            }
        }
    }
    Ok(total / p.nrows() as f64)
}

fn validate_distribution(m: ArrayView2<'_, f64>, context: &str) -> Result<()> {
    for row in m.rows() {
        if row.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::argument(format!(
                "{context}: rows must be non-negative and finite"
            )));
        }
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::argument(format!(
                "{context}: row sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// A loss evaluated on minibatches during SGD. Implementations own the
/// per-sample targets and look them up by dataset row index, so the trainer
/// only ever moves feature rows around.
pub trait BatchLoss {
    /// Hard labels for the full dataset (used for accuracy reporting and,
    /// where applicable, the cross-entropy term).
    fn labels(&self) -> &[usize];

    /// Mean loss over the given rows plus its gradient w.r.t. the logits.
    /// `rows` are dataset indices aligned with the logits' rows.
    fn loss_and_grad(&self, logits: &LogitBatch, rows: &[usize]) -> (f64, Array2<f64>);

    /// Called by the trainer before each epoch; lets a loss refresh
    /// per-epoch targets (label corruption).
    fn on_epoch_start(&mut self, _epoch: usize) {}
}

/// Plain hard-label cross entropy.
#[derive(Debug, Clone)]
pub struct HardLabelLoss {
    labels: Vec<usize>,
}

impl HardLabelLoss {
    pub fn new(labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::argument(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(HardLabelLoss { labels })
    }
}

impl BatchLoss for HardLabelLoss {
    fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn loss_and_grad(&self, logits: &LogitBatch, rows: &[usize]) -> (f64, Array2<f64>) {
        let n = rows.len() as f64;
        let log_probs = log_softmax_with_temperature(logits, 1.0);
        let mut grad = log_probs.mapv(f64::exp);
        let mut total = 0.0;
        for (i, &row) in rows.iter().enumerate() {
            let y = self.labels[row];
            total -= log_probs[[i, y]];
            grad[[i, y]] -= 1.0;
        }
        grad.mapv_inplace(|v| v / n);
        (total / n, grad)
    }
}

/// Fraction of rows whose argmax (ties to lowest index) equals the label.
pub(crate) fn accuracy_from_logits(logits: &LogitBatch, labels: &[usize]) -> f64 {
    let correct = logits
        .values()
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &y)| super::argmax_tie_lowest(row.as_slice().unwrap()) == y)
        .count();
    correct as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn logits(values: Array2<f64>) -> LogitBatch {
        LogitBatch::new(values).unwrap()
    }

    #[test]
    fn softmax_equal_logits_is_uniform() {
        let l = logits(array![[2.5, 2.5, 2.5, 2.5]]);
        let p = softmax_with_temperature(&l, 0.7).unwrap();
        for &v in p.iter() {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_huge_temperature_flattens() {
        let l = logits(array![[1.0, -3.0, 10.0]]);
        let p = softmax_with_temperature(&l, 1e6).unwrap();
        for &v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_one_two_three() {
        let l = logits(array![[1.0, 2.0, 3.0]]);
        let p = softmax_with_temperature(&l, 1.0).unwrap();
        assert_abs_diff_eq!(p[[0, 0]], 0.09003, epsilon = 1e-4);
        assert_abs_diff_eq!(p[[0, 1]], 0.24473, epsilon = 1e-4);
        assert_abs_diff_eq!(p[[0, 2]], 0.66524, epsilon = 1e-4);
    }

    #[test]
    fn softmax_rejects_nonpositive_temperature() {
        let l = logits(array![[1.0, 2.0]]);
        assert!(matches!(
            softmax_with_temperature(&l, 0.0),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            softmax_with_temperature(&l, -2.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn softmax_survives_extreme_logits() {
        let l = logits(array![[1000.0, -1000.0, 0.0]]);
        let p = softmax_with_temperature(&l, 1.0).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p.row(0).sum(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn cross_entropy_peaked_is_tiny() {
        let l = logits(array![[30.0, 0.0, 0.0], [0.0, 30.0, 0.0]]);
        let ce = cross_entropy(&l, &[0, 1]).unwrap();
        assert!(ce < 1e-9);
    }

    #[test]
    fn cross_entropy_uniform_ten_classes_is_ln_ten() {
        let l = logits(Array2::zeros((4, 10)));
        let ce = cross_entropy(&l, &[0, 3, 7, 9]).unwrap();
        assert_abs_diff_eq!(ce, 10f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn cross_entropy_matches_scalar_oracle() {
        let vals = array![
            [0.3, -1.2, 2.2, 0.0],
            [1.1, 1.1, -0.4, 0.9],
            [-2.0, 0.5, 0.6, 3.3]
        ];
        let labels = [2usize, 0, 1];
        let ce = cross_entropy(&logits(vals.clone()), &labels).unwrap();
        // brute-force per-sample -log p of the true class
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row: Vec<f64> = vals.row(i).to_vec();
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            total += -(row[y].exp() / denom).ln();
        }
        assert_abs_diff_eq!(ce, total / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let l = logits(array![[0.0, 0.0]]);
        assert!(matches!(cross_entropy(&l, &[2]), Err(Error::Argument(_))));
    }

    #[test]
    fn kl_identical_rows_is_zero() {
        let p = array![[0.2, 0.3, 0.5], [0.9, 0.05, 0.05]];
        let kl = kl_divergence(p.view(), p.view()).unwrap();
        assert!(kl.abs() <= 1e-12);
    }

    #[test]
    fn kl_point_mass_vs_uniform_is_ln_two() {
        let p = array![[1.0, 0.0]];
        let q = array![[0.5, 0.5]];
        let kl = kl_divergence(p.view(), q.view()).unwrap();
        assert_abs_diff_eq!(kl, 2f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn kl_matches_elementwise_oracle() {
        let p = array![[0.1, 0.6, 0.3], [0.25, 0.25, 0.5]];
        let q = array![[0.3, 0.3, 0.4], [0.05, 0.15, 0.8]];
        let kl = kl_divergence(p.view(), q.view()).unwrap();
        let mut total = 0.0;
        for i in 0..2 {
            for j in 0..3 {
                total += p[[i, j]] * (p[[i, j]] / q[[i, j]]).ln();
            }
        }
        assert_abs_diff_eq!(kl, total / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn kl_floors_zero_q_instead_of_nan() {
        let p = array![[0.5, 0.5]];
        let q = array![[1.0, 0.0]];
        let kl = kl_divergence(p.view(), q.view()).unwrap();
        assert!(kl.is_finite());
        assert!(kl > 0.0);
    }

    #[test]
    fn hard_label_loss_value_matches_primitive() {
        let vals = array![[0.4, -0.7, 1.9], [2.0, 0.1, -1.0]];
        let labels = vec![2usize, 0];
        let mut loss = HardLabelLoss::new(labels.clone(), 3).unwrap();
        let l = logits(vals);
        let (v, g) = loss.loss_and_grad(&l, &[0, 1]);
        assert_abs_diff_eq!(v, cross_entropy(&l, &labels).unwrap(), epsilon = 1e-12);
        assert_eq!(g.dim(), (2, 3));
        // gradient rows of softmax-minus-onehot sum to zero
        for row in g.rows() {
            assert_abs_diff_eq!(row.sum(), 0.0, epsilon = 1e-12);
        }
    }
}
