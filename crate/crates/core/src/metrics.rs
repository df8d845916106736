//! Evaluation quantities: accuracies, prediction intersection/consensus,
//! mutual/exclusive area deltas, edge-transfer scores, and the over-fit
//! spike detector for noisy rounds.

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::nn::{argmax_tie_lowest, Model};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

/// The held-out sample ids a model classifies correctly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionSet {
    pub correct: BTreeSet<u64>,
    pub evaluated: usize,
}

impl PredictionSet {
    pub fn accuracy(&self) -> f64 {
        if self.evaluated == 0 {
            0.0
        } else {
            self.correct.len() as f64 / self.evaluated as f64
        }
    }
}

/// Ids where `argmax(logits)` (ties to the lowest class) equals the label.
pub fn prediction_set(model: &Model, eval_data: &LabeledSet) -> Result<PredictionSet> {
    if eval_data.is_empty() {
        return Err(Error::argument("evaluation set is empty"));
    }
    let logits = model.forward(eval_data.features.view())?;
    let mut correct = BTreeSet::new();
    for (row, (values, &label)) in logits
        .values()
        .rows()
        .into_iter()
        .zip(&eval_data.labels)
        .enumerate()
    {
        if argmax_tie_lowest(values.as_slice().unwrap()) == label {
            correct.insert(eval_data.ids[row]);
        }
    }
    Ok(PredictionSet {
        correct,
        evaluated: eval_data.len(),
    })
}

/// Majority-vote prediction set of an ensemble (vote ties resolve to the
/// lowest class index).
pub fn ensemble_prediction_set(models: &[Model], eval_data: &LabeledSet) -> Result<PredictionSet> {
    if models.is_empty() {
        return Err(Error::argument("ensemble is empty"));
    }
    if eval_data.is_empty() {
        return Err(Error::argument("evaluation set is empty"));
    }
    let class_count = eval_data.class_count;
    let mut votes = vec![vec![0usize; class_count]; eval_data.len()];
    for m in models {
        let logits = m.forward(eval_data.features.view())?;
        for (row, values) in logits.values().rows().into_iter().enumerate() {
            votes[row][argmax_tie_lowest(values.as_slice().unwrap())] += 1;
        }
    }
    let mut correct = BTreeSet::new();
    for (row, vote) in votes.iter().enumerate() {
        let winner = vote
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.cmp(b).then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .unwrap();
        if winner == eval_data.labels[row] {
            correct.insert(eval_data.ids[row]);
        }
    }
    Ok(PredictionSet {
        correct,
        evaluated: eval_data.len(),
    })
}

/// Plain accuracy of a model on a dataset.
pub fn accuracy(model: &Model, data: &LabeledSet) -> Result<f64> {
    Ok(prediction_set(model, data)?.accuracy())
}

/// Intersection-over-union of two correct-prediction sets, with the
/// exclusive areas.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsensusReport {
    pub intersection_size: usize,
    pub union_size: usize,
    /// `|T ∩ S| / |T ∪ S|`; 0 when the union is empty.
    pub consensus: f64,
    pub teacher_exclusive: usize,
    pub student_exclusive: usize,
}

pub fn consensus(teacher: &PredictionSet, student: &PredictionSet) -> ConsensusReport {
    let intersection_size = teacher.correct.intersection(&student.correct).count();
    let union_size = teacher.correct.union(&student.correct).count();
    ConsensusReport {
        intersection_size,
        union_size,
        consensus: if union_size == 0 {
            0.0
        } else {
            intersection_size as f64 / union_size as f64
        },
        teacher_exclusive: teacher.correct.len() - intersection_size,
        student_exclusive: student.correct.len() - intersection_size,
    }
}

/// Change of the mutual area (`|after ∩ T| - |before ∩ T|`) and of the
/// student-exclusive area (`|after \ T| - |before \ T|`). Their sum equals
/// the change in the student's correct count.
pub fn area_deltas(
    student_before: &PredictionSet,
    student_after: &PredictionSet,
    teacher: &PredictionSet,
) -> (i64, i64) {
    let mutual_before = student_before.correct.intersection(&teacher.correct).count() as i64;
    let mutual_after = student_after.correct.intersection(&teacher.correct).count() as i64;
    let excl_before = student_before.correct.difference(&teacher.correct).count() as i64;
    let excl_after = student_after.correct.difference(&teacher.correct).count() as i64;
    (mutual_after - mutual_before, excl_after - excl_before)
}

/// Accuracy gain of the core on an edge's holdout after distilling that
/// edge's model: `acc(after) - acc(before)`.
pub fn edge_transfer_score(
    core_before: &Model,
    core_after: &Model,
    edge_holdout: &LabeledSet,
) -> Result<f64> {
    Ok(accuracy(core_after, edge_holdout)? - accuracy(core_before, edge_holdout)?)
}

/// Flag rounds whose train accuracy exceeds the median of the trailing
/// `window` rounds by more than `threshold`. The first round has no trailing
/// history and is never flagged.
pub fn overfit_spike_flags(trace: &[f64], window: usize, threshold: f64) -> Vec<bool> {
    let mut flags = vec![false; trace.len()];
    if window == 0 {
        return flags;
    }
    for i in 1..trace.len() {
        let start = i.saturating_sub(window);
        let mut recent: Vec<f64> = trace[start..i].to_vec();
        recent.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if recent.len() % 2 == 1 {
            recent[recent.len() / 2]
        } else {
            0.5 * (recent[recent.len() / 2 - 1] + recent[recent.len() / 2])
        };
        flags[i] = trace[i] - median > threshold;
    }
    flags
}

/// Spike detector defaults: 3-round window, 0.15 absolute jump.
pub const SPIKE_WINDOW: usize = 3;
pub const SPIKE_THRESHOLD: f64 = 0.15;

/// Per-round metric snapshot. Round 0 is the core-initialization round, so
/// all teacher-related fields are absent there.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub variant: String,
    pub core_test_acc: f64,
    pub edge_test_acc: Option<f64>,
    /// Core accuracy on the distillation (core) set; spike-detector input.
    pub core_train_acc: f64,
    /// Teacher-vs-student consensus measured at the uplink instant
    /// (before the round's distillation).
    pub consensus_current: Option<f64>,
    /// Consensus between the first re-collected edge model (frozen at its
    /// uplink) and the current core.
    pub consensus_edge1: Option<f64>,
    pub delta_mutual: Option<i64>,
    pub delta_exclusive: Option<i64>,
    pub transfer_score: Option<f64>,
    pub noisy_flag: bool,
    pub spike_flag: bool,
    pub memory_size: usize,
}

/// Write records as CSV with the fixed column schema.
pub fn write_round_records_csv(records: &[RoundRecord], path: &Path) -> Result<()> {
    let text = round_records_to_csv(records)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn round_records_to_csv(records: &[RoundRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::argument(format!("csv flush: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_round_records_csv(path: &Path) -> Result<Vec<RoundRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;
    use crate::nn::Activation;

    fn pset(ids: &[u64], evaluated: usize) -> PredictionSet {
        PredictionSet {
            correct: ids.iter().copied().collect(),
            evaluated,
        }
    }

    #[test]
    fn perfect_model_captures_all_ids() {
        // difficulty-0 blobs in 10-d are comfortably separable
        let data = make_synthetic(3, 10, 10, 0.0, 50).unwrap();
        let m = {
            use crate::nn::{train_sgd, HardLabelLoss, Model, TrainSchedule};
            let init = Model::seeded(&[10, 16, 3], Activation::Relu, 1).unwrap();
            let mut loss = HardLabelLoss::new(data.labels.clone(), 3).unwrap();
            train_sgd(
                &init,
                data.features.view(),
                &loss,
                &TrainSchedule::with_epochs(60),
                2,
            )
            .unwrap()
            .model
        };
        let ps = prediction_set(&m, &data).unwrap();
        assert_eq!(ps.correct.len(), data.len());
        assert_eq!(ps.accuracy(), 1.0);
    }

    #[test]
    fn constant_model_hits_exactly_class_zero() {
        let data = make_synthetic(10, 20, 5, 0.5, 51).unwrap();
        let m = crate::nn::Model::zeros(&[5, 10], Activation::Relu).unwrap();
        // all-zero logits: argmax tie rule picks class 0 for every sample
        let ps = prediction_set(&m, &data).unwrap();
        assert_eq!(ps.correct.len(), data.class_counts()[0]);
        // accuracy is set size over N by definition
        assert_eq!(
            ps.accuracy(),
            ps.correct.len() as f64 / data.len() as f64
        );
    }

    #[test]
    fn consensus_identical_sets_is_one() {
        let s = pset(&[1, 2, 3], 10);
        let r = consensus(&s, &s);
        assert_eq!(r.consensus, 1.0);
        assert_eq!(r.teacher_exclusive, 0);
        assert_eq!(r.student_exclusive, 0);
    }

    #[test]
    fn consensus_disjoint_sets_is_zero() {
        let t = pset(&[1, 2], 10);
        let s = pset(&[3, 4], 10);
        assert_eq!(consensus(&t, &s).consensus, 0.0);
    }

    #[test]
    fn consensus_worked_example() {
        // |T| = 60, |S| = 50, |T ∩ S| = 40 -> 40/70
        let t_ids: Vec<u64> = (0..60).collect();
        let s_ids: Vec<u64> = (20..70).collect();
        let t = pset(&t_ids, 100);
        let s = pset(&s_ids, 100);
        let r = consensus(&t, &s);
        assert_eq!(r.intersection_size, 40);
        assert_eq!(r.union_size, 70);
        assert!((r.consensus - 40.0 / 70.0).abs() < 1e-12);
        assert_eq!(r.teacher_exclusive, 20);
        assert_eq!(r.student_exclusive, 10);
    }

    #[test]
    fn consensus_is_symmetric() {
        let t = pset(&[1, 2, 3, 10], 20);
        let s = pset(&[2, 3, 4], 20);
        assert_eq!(consensus(&t, &s).consensus, consensus(&s, &t).consensus);
    }

    #[test]
    fn area_deltas_identity_and_single_gain() {
        let t = pset(&[1, 2, 3], 10);
        let before = pset(&[2, 5], 10);
        assert_eq!(area_deltas(&before, &before, &t), (0, 0));
        let after = pset(&[2, 5, 3], 10);
        assert_eq!(area_deltas(&before, &after, &t), (1, 0));
    }

    #[test]
    fn area_deltas_match_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> BTreeSet<u64> {
                (0..30).filter(|_| rng.gen_bool(0.4)).collect()
            };
            let t = PredictionSet {
                correct: draw(&mut rng),
                evaluated: 30,
            };
            let b = PredictionSet {
                correct: draw(&mut rng),
                evaluated: 30,
            };
            let a = PredictionSet {
                correct: draw(&mut rng),
                evaluated: 30,
            };
            let (dm, de) = area_deltas(&b, &a, &t);
            // brute-force per-id enumeration
            let mut mutual = 0i64;
            let mut exclusive = 0i64;
            for id in 0..30u64 {
                let in_t = t.correct.contains(&id);
                let in_b = b.correct.contains(&id) as i64;
                let in_a = a.correct.contains(&id) as i64;
                if in_t {
                    mutual += in_a - in_b;
                } else {
                    exclusive += in_a - in_b;
                }
            }
            assert_eq!((dm, de), (mutual, exclusive));
            // accounting identity
            assert_eq!(
                dm + de,
                a.correct.len() as i64 - b.correct.len() as i64
            );
        }
    }

    #[test]
    fn transfer_score_of_identical_models_is_zero() {
        let data = make_synthetic(3, 10, 4, 0.4, 60).unwrap();
        let m = crate::nn::Model::seeded(&[4, 6, 3], Activation::Relu, 3).unwrap();
        let score = edge_transfer_score(&m, &m.clone(), &data).unwrap();
        assert_eq!(score, 0.0);
        assert!((-1.0..=1.0).contains(&score));
    }

    #[test]
    fn spike_detector_constant_trace_never_fires() {
        let flags = overfit_spike_flags(&[0.8; 12], SPIKE_WINDOW, SPIKE_THRESHOLD);
        assert!(flags.iter().all(|&f| !f));
    }

    #[test]
    fn spike_detector_flags_exactly_the_jump() {
        let mut trace = vec![0.6; 10];
        trace[5] = 0.9; // +0.3 jump
        let flags = overfit_spike_flags(&trace, SPIKE_WINDOW, SPIKE_THRESHOLD);
        let fired: Vec<usize> = flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(fired, vec![5]);
    }

    #[test]
    fn spike_detector_handles_two_spikes() {
        let mut trace = vec![0.55; 10];
        trace[4] = 0.95;
        trace[7] = 0.92;
        let flags = overfit_spike_flags(&trace, SPIKE_WINDOW, SPIKE_THRESHOLD);
        assert!(flags[4] && flags[7]);
        assert!(!flags[5] && !flags[6]);
    }

    #[test]
    fn round_record_csv_round_trip() {
        let records = vec![
            RoundRecord {
                round: 0,
                variant: "CPP".into(),
                core_test_acc: 0.75,
                edge_test_acc: None,
                core_train_acc: 0.9,
                consensus_current: None,
                consensus_edge1: None,
                delta_mutual: None,
                delta_exclusive: None,
                transfer_score: None,
                noisy_flag: false,
                spike_flag: false,
                memory_size: 0,
            },
            RoundRecord {
                round: 1,
                variant: "CPP".into(),
                core_test_acc: 0.78125,
                edge_test_acc: Some(0.71),
                core_train_acc: 0.93,
                consensus_current: Some(0.8541),
                consensus_edge1: Some(0.8541),
                delta_mutual: Some(12),
                delta_exclusive: Some(-3),
                transfer_score: Some(0.05),
                noisy_flag: true,
                spike_flag: false,
                memory_size: 1,
            },
        ];
        let text = round_records_to_csv(&records).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "round,variant,core_test_acc,edge_test_acc,core_train_acc,consensus_current,\
             consensus_edge1,delta_mutual,delta_exclusive,transfer_score,noisy_flag,\
             spike_flag,memory_size"
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rounds.csv");
        std::fs::write(&path, &text).unwrap();
        let loaded = read_round_records_csv(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[1].delta_mutual, Some(12));
        assert_eq!(loaded[1].core_test_acc.to_bits(), 0.78125f64.to_bits());
        assert_eq!(loaded[0].edge_test_acc, None);
    }
}
