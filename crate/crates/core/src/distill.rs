//! Knowledge-distillation losses and the distillation training phase.
//!
//! The composite loss is the hard-label cross entropy on the core set plus,
//! per teacher, `t^2` times the mean KL divergence between the teacher's and
//! the student's temperature-softened output distributions. Teachers are
//! frozen: their soft targets are precomputed once, so no gradient ever
//! reaches them.

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::nn::{
    cross_entropy, kl_divergence, softmax_with_temperature, train_sgd_with_options, BatchLoss,
    EarlyStop, LogitBatch, Model, TrainOptions, TrainReport, TrainSchedule,
};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

/// How the teacher dispatched to an edge is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherMode {
    /// Exact parameter copy of the current core model.
    Cloned,
    /// Fresh seeded initialization that acquires core knowledge separately.
    Independent,
    /// Fresh seeded initialization with no core-side training at all.
    Scratch,
}

/// Distillation hyper-parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Softening temperature applied to both teacher and student logits.
    pub temperature: f64,
    /// Capacity of the temporal memory (number of past edge models kept).
    pub memory_size: usize,
    /// Weight of the hard-label term relative to the KL terms.
    pub core_loss_weight: f64,
    pub mode: TeacherMode,
    /// Soften only the teacher side (the printed single-sided form) instead
    /// of the standard dual softening.
    pub asymmetric_softening: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            temperature: 2.5,
            memory_size: 3,
            core_loss_weight: 1.0,
            mode: TeacherMode::Cloned,
            asymmetric_softening: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::argument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.core_loss_weight > 0.0) || !self.core_loss_weight.is_finite() {
            return Err(Error::argument(format!(
                "core_loss_weight must be positive, got {}",
                self.core_loss_weight
            )));
        }
        Ok(())
    }
}

/// Where a teacher came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TeacherProvenance {
    pub round_index: usize,
    pub edge_id: usize,
    pub mode: TeacherMode,
}

/// A non-empty set of frozen teacher models with provenance tags.
#[derive(Debug, Clone)]
pub struct TeacherSet {
    teachers: Vec<Model>,
    provenance: Vec<TeacherProvenance>,
}

impl TeacherSet {
    pub fn new(teachers: Vec<Model>, provenance: Vec<TeacherProvenance>) -> Result<Self> {
        if teachers.is_empty() {
            return Err(Error::argument("teacher set must be non-empty"));
        }
        if teachers.len() != provenance.len() {
            return Err(Error::argument("one provenance tag per teacher required"));
        }
        for pair in teachers.windows(2) {
            if !pair[0].compatible_with(&pair[1]) {
                return Err(Error::argument(
                    "teachers must share a single architecture",
                ));
            }
        }
        Ok(TeacherSet {
            teachers,
            provenance,
        })
    }

    /// Single teacher without meaningful provenance, for direct use.
    pub fn single(teacher: Model) -> Self {
        TeacherSet {
            provenance: vec![TeacherProvenance {
                round_index: 0,
                edge_id: 0,
                mode: TeacherMode::Cloned,
            }],
            teachers: vec![teacher],
        }
    }

    pub fn teachers(&self) -> &[Model] {
        &self.teachers
    }

    pub fn provenance(&self) -> &[TeacherProvenance] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.teachers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teachers.is_empty()
    }
}

/// Hard-label cross entropy of the student on the core set.
pub fn core_loss(student: &Model, core_data: &LabeledSet) -> Result<f64> {
    dataset_cross_entropy(student, core_data)
}

/// Hard-label cross entropy of an edge model on one edge set (one `k` term;
/// the sum over edges is realized by dispatching per edge).
pub fn edge_loss(edge_model: &Model, edge_data: &LabeledSet) -> Result<f64> {
    dataset_cross_entropy(edge_model, edge_data)
}

fn dataset_cross_entropy(model: &Model, data: &LabeledSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::argument("dataset is empty"));
    }
    let logits = model.forward(data.features.view())?;
    cross_entropy(&logits, &data.labels)
}

/// The composite distillation objective as a [`BatchLoss`]: the hard-label
/// term plus one KL term per teacher, with per-row teacher soft targets
/// precomputed over the whole core set.
#[derive(Debug, Clone)]
pub struct DistillLoss {
    labels: Vec<usize>,
    /// Per teacher: softened probabilities on every core row.
    teacher_soft: Vec<Array2<f64>>,
    temperature: f64,
    core_weight: f64,
    asymmetric: bool,
}

impl DistillLoss {
    pub fn new(
        student: &Model,
        teachers: &TeacherSet,
        core_data: &LabeledSet,
        cfg: &DistillConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if core_data.is_empty() {
            return Err(Error::argument("core data is empty"));
        }
        for t in teachers.teachers() {
            if !t.compatible_with(student) {
                return Err(Error::argument(format!(
                    "teacher dims {:?} incompatible with student dims {:?}",
                    t.layer_dims(),
                    student.layer_dims()
                )));
            }
        }
        let mut teacher_soft = Vec::with_capacity(teachers.len());
        for t in teachers.teachers() {
            let logits = t.forward(core_data.features.view())?;
            teacher_soft.push(softmax_with_temperature(&logits, cfg.temperature)?);
        }
        Ok(DistillLoss {
            labels: core_data.labels.clone(),
            teacher_soft,
            temperature: cfg.temperature,
            core_weight: cfg.core_loss_weight,
            asymmetric: cfg.asymmetric_softening,
        })
    }

    /// The KL part alone (already scaled by `t^2`), over the given rows.
    pub fn distill_term(&self, student_logits: &LogitBatch, rows: &[usize]) -> f64 {
        let t = self.temperature;
        let t2 = t * t;
        let mut total = 0.0;
        if self.asymmetric {
            let student_probs = softmax_with_temperature(student_logits, 1.0).unwrap();
            for soft in &self.teacher_soft {
                let target = soft.select(Axis(0), rows);
                total += t2 * kl_divergence(student_probs.view(), target.view()).unwrap();
            }
        } else {
            let student_soft = softmax_with_temperature(student_logits, t).unwrap();
            for soft in &self.teacher_soft {
                let target = soft.select(Axis(0), rows);
                total += t2 * kl_divergence(target.view(), student_soft.view()).unwrap();
            }
        }
        total
    }
}

impl BatchLoss for DistillLoss {
    fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn loss_and_grad(&self, logits: &LogitBatch, rows: &[usize]) -> (f64, Array2<f64>) {
        let n = rows.len() as f64;
        let t = self.temperature;

        // hard-label term
        let probs = softmax_with_temperature(logits, 1.0).unwrap();
        let mut value = 0.0;
        let mut grad = probs.clone();
        for (i, &row) in rows.iter().enumerate() {
            let y = self.labels[row];
            value -= probs[[i, y]].max(f64::MIN_POSITIVE).ln();
            grad[[i, y]] -= 1.0;
        }
        value = self.core_weight * value / n;
        grad.mapv_inplace(|v| self.core_weight * v / n);

        value += self.distill_term(logits, rows);

        if self.asymmetric {
            // d/dz of sum_j p_j log(p_j / q_j) with p = softmax(z), q fixed:
            // p_k * ((log p_k - log q_k) - rowwise KL)
            for soft in &self.teacher_soft {
                for (i, &row) in rows.iter().enumerate() {
                    let mut row_kl = 0.0;
                    let classes = probs.ncols();
                    let mut logdiff = vec![0.0; classes];
                    for j in 0..classes {
                        let p = probs[[i, j]];
                        let q = soft[[row, j]].max(1e-12);
                        if p > 0.0 {
                            logdiff[j] = p.ln() - q.ln();
                            row_kl += p * logdiff[j];
                        }
                    }
                    for j in 0..classes {
                        let p = probs[[i, j]];
                        grad[[i, j]] += t * t * p * (logdiff[j] - row_kl) / n;
                    }
                }
            }
        } else {
            // d/dz of t^2 * KL(p_teacher || softmax(z/t)) = t * (q - p_teacher)
            let student_soft = softmax_with_temperature(logits, t).unwrap();
            for soft in &self.teacher_soft {
                for (i, &row) in rows.iter().enumerate() {
                    for j in 0..student_soft.ncols() {
                        grad[[i, j]] += t * (student_soft[[i, j]] - soft[[row, j]]) / n;
                    }
                }
            }
        }

        (value, grad)
    }
}

/// Full-dataset composite distillation loss of `student`.
pub fn distill_loss(
    student: &Model,
    teachers: &TeacherSet,
    core_data: &LabeledSet,
    cfg: &DistillConfig,
) -> Result<f64> {
    let loss = DistillLoss::new(student, teachers, core_data, cfg)?;
    let logits = student.forward(core_data.features.view())?;
    let rows: Vec<usize> = (0..core_data.len()).collect();
    Ok(loss.loss_and_grad(&logits, &rows).0)
}

/// Prepare the model dispatched to an edge. `Cloned` copies the core's
/// parameters bitwise; the other modes draw a fresh seeded initialization
/// with the same architecture.
pub fn prepare_teacher(core_model: &Model, mode: TeacherMode, rng_seed: u64) -> Model {
    match mode {
        TeacherMode::Cloned => core_model.clone(),
        TeacherMode::Independent | TeacherMode::Scratch => {
            Model::seeded(core_model.layer_dims(), core_model.activation(), rng_seed)
                .expect("architecture already validated")
        }
    }
}

/// Early-stop defaults for the distillation phase.
pub const DISTILL_EARLY_STOP: EarlyStop = EarlyStop {
    min_improvement: 1e-5,
    patience: 5,
};

/// Train the student on the composite loss for the schedule's budget,
/// restarting the learning rate from its initial value. Teachers are left
/// untouched.
pub fn distill_phase(
    student: &Model,
    teachers: &TeacherSet,
    core_data: &LabeledSet,
    cfg: &DistillConfig,
    schedule: &TrainSchedule,
    rng_seed: u64,
) -> Result<TrainReport> {
    let mut loss = DistillLoss::new(student, teachers, core_data, cfg)?;
    train_sgd_with_options(
        student,
        core_data.features.view(),
        &mut loss,
        schedule,
        rng_seed,
        TrainOptions {
            early_stop: Some(DISTILL_EARLY_STOP),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;
    use crate::nn::{train_sgd, Activation, HardLabelLoss};
    use approx::assert_abs_diff_eq;

    fn toy_data(seed: u64) -> LabeledSet {
        make_synthetic(4, 20, 6, 0.4, seed).unwrap()
    }

    fn toy_model(seed: u64) -> Model {
        Model::seeded(&[6, 10, 4], Activation::Relu, seed).unwrap()
    }

    #[test]
    fn core_loss_equals_primitive() {
        let data = toy_data(1);
        let m = toy_model(2);
        let direct = {
            let logits = m.forward(data.features.view()).unwrap();
            cross_entropy(&logits, &data.labels).unwrap()
        };
        assert_abs_diff_eq!(core_loss(&m, &data).unwrap(), direct, epsilon = 1e-15);
        assert_abs_diff_eq!(edge_loss(&m, &data).unwrap(), direct, epsilon = 1e-15);
    }

    #[test]
    fn core_loss_uniform_logits_is_ln_classes() {
        let data = toy_data(3);
        let m = Model::zeros(&[6, 10, 4], Activation::Relu).unwrap();
        assert_abs_diff_eq!(core_loss(&m, &data).unwrap(), 4f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn self_distillation_term_is_zero() {
        let data = toy_data(4);
        let m = toy_model(5);
        let teachers = TeacherSet::single(m.clone());
        let cfg = DistillConfig::default();
        let total = distill_loss(&m, &teachers, &data, &cfg).unwrap();
        let core = core_loss(&m, &data).unwrap();
        assert!(
            (total - core).abs() <= 1e-12,
            "distill term {}",
            total - core
        );
    }

    #[test]
    fn t_equals_one_reduces_to_plain_kl() {
        let data = toy_data(6);
        let student = toy_model(7);
        let teacher = toy_model(8);
        let cfg = DistillConfig {
            temperature: 1.0,
            ..DistillConfig::default()
        };
        let total =
            distill_loss(&student, &TeacherSet::single(teacher.clone()), &data, &cfg).unwrap();

        let s_logits = student.forward(data.features.view()).unwrap();
        let t_logits = teacher.forward(data.features.view()).unwrap();
        let s_probs = softmax_with_temperature(&s_logits, 1.0).unwrap();
        let t_probs = softmax_with_temperature(&t_logits, 1.0).unwrap();
        let expected = cross_entropy(&s_logits, &data.labels).unwrap()
            + kl_divergence(t_probs.view(), s_probs.view()).unwrap();
        assert!((total - expected).abs() <= 1e-12);
    }

    #[test]
    fn duplicate_teacher_doubles_the_distill_term() {
        let data = toy_data(9);
        let student = toy_model(10);
        let teacher = toy_model(11);
        let cfg = DistillConfig::default();
        let core = core_loss(&student, &data).unwrap();
        let single =
            distill_loss(&student, &TeacherSet::single(teacher.clone()), &data, &cfg).unwrap()
                - core;
        let prov = TeacherProvenance {
            round_index: 0,
            edge_id: 0,
            mode: TeacherMode::Cloned,
        };
        let double_set = TeacherSet::new(vec![teacher.clone(), teacher], vec![prov, prov]).unwrap();
        let double = distill_loss(&student, &double_set, &data, &cfg).unwrap() - core;
        assert!((double - 2.0 * single).abs() <= 1e-12);
    }

    #[test]
    fn incompatible_teacher_is_rejected() {
        let data = toy_data(12);
        let student = toy_model(13);
        let other = Model::seeded(&[6, 8, 4], Activation::Relu, 14).unwrap();
        let cfg = DistillConfig::default();
        assert!(matches!(
            distill_loss(&student, &TeacherSet::single(other), &data, &cfg),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn prepare_teacher_modes() {
        let core = toy_model(15);
        let cloned = prepare_teacher(&core, TeacherMode::Cloned, 999);
        assert!(cloned.params_bitwise_eq(&core));

        let ind_a = prepare_teacher(&core, TeacherMode::Independent, 1);
        let ind_b = prepare_teacher(&core, TeacherMode::Independent, 2);
        assert!(!ind_a.params_bitwise_eq(&ind_b));
        assert!(!ind_a.params_bitwise_eq(&core));
        assert_eq!(ind_a.layer_dims(), core.layer_dims());
    }

    #[test]
    fn cloned_untrained_teacher_gives_zero_distill_term() {
        let data = toy_data(16);
        let core = toy_model(17);
        let teacher = prepare_teacher(&core, TeacherMode::Cloned, 0);
        let cfg = DistillConfig::default();
        let total = distill_loss(&core, &TeacherSet::single(teacher), &data, &cfg).unwrap();
        let base = core_loss(&core, &data).unwrap();
        assert!((total - base).abs() <= 1e-12);
    }

    #[test]
    fn distill_phase_zero_epochs_leaves_student_unchanged() {
        let data = toy_data(18);
        let student = toy_model(19);
        let teacher = toy_model(20);
        let cfg = DistillConfig::default();
        let mut schedule = TrainSchedule::with_epochs(0);
        schedule.decay_milestones.clear();
        let report = distill_phase(
            &student,
            &TeacherSet::single(teacher),
            &data,
            &cfg,
            &schedule,
            0,
        )
        .unwrap();
        assert!(report.model.params_bitwise_eq(&student));
    }

    #[test]
    fn distill_phase_never_mutates_teachers() {
        let data = toy_data(21);
        let student = toy_model(22);
        let teacher = toy_model(23);
        let frozen = teacher.clone();
        let teachers = TeacherSet::single(teacher);
        let cfg = DistillConfig::default();
        let schedule = TrainSchedule::with_epochs(5);
        distill_phase(&student, &teachers, &data, &cfg, &schedule, 3).unwrap();
        assert!(teachers.teachers()[0].params_bitwise_eq(&frozen));
    }

    #[test]
    fn strong_teacher_lifts_weak_student() {
        // statistical: holds on at least 4 of 5 seeds
        let mut wins = 0;
        for seed in 1..=5u64 {
            let mix = crate::data::Mixture::new(3, 5, 0.3, 100 + seed).unwrap();
            let train = mix.sample(40, seed, 0);
            let test = mix.sample(40, 900 + seed, 1 << 32);
            let schedule = TrainSchedule::with_epochs(30);

            let strong = {
                let init = Model::seeded(&[5, 12, 3], Activation::Relu, 10 + seed).unwrap();
                let mut loss = HardLabelLoss::new(train.labels.clone(), 3).unwrap();
                train_sgd(&init, train.features.view(), &mut loss, &schedule, seed)
                    .unwrap()
                    .model
            };
            let weak = Model::seeded(&[5, 12, 3], Activation::Relu, 50 + seed).unwrap();

            let acc = |m: &Model| {
                let logits = m.forward(test.features.view()).unwrap();
                logits
                    .values()
                    .rows()
                    .into_iter()
                    .zip(&test.labels)
                    .filter(|(r, &y)| crate::nn::argmax_tie_lowest(r.as_slice().unwrap()) == y)
                    .count() as f64
                    / test.len() as f64
            };
            let before = acc(&weak);
            let cfg = DistillConfig::default();
            let report = distill_phase(
                &weak,
                &TeacherSet::single(strong),
                &train,
                &cfg,
                &schedule,
                seed,
            )
            .unwrap();
            if acc(&report.model) > before {
                wins += 1;
            }
        }
        assert!(wins >= 4, "student improved on only {wins}/5 seeds");
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        use crate::nn::gradient;
        let data = make_synthetic(3, 4, 4, 0.4, 30).unwrap();
        for (asym, seed) in [(false, 31u64), (true, 32u64)] {
            let student = Model::seeded(&[4, 6, 3], Activation::Tanh, seed).unwrap();
            let teacher = Model::seeded(&[4, 6, 3], Activation::Tanh, seed + 100).unwrap();
            let cfg = DistillConfig {
                temperature: 3.0,
                asymmetric_softening: asym,
                ..DistillConfig::default()
            };
            let loss =
                DistillLoss::new(&student, &TeacherSet::single(teacher), &data, &cfg).unwrap();
            let rows: Vec<usize> = (0..data.len()).collect();
            let h = 1e-5;
            let analytic = gradient(&student, data.features.view(), &rows, &loss).unwrap();
            let mut worst: f64 = 0.0;
            for l in 0..student.weights().len() {
                let (r, c) = student.weights()[l].dim();
                for i in 0..r {
                    for j in 0..c {
                        let mut plus = student.clone();
                        plus.weights_mut()[l][[i, j]] += h;
                        let mut minus = student.clone();
                        minus.weights_mut()[l][[i, j]] -= h;
                        let fd = (crate::nn::loss_value(&plus, data.features.view(), &rows, &loss)
                            .unwrap()
                            - crate::nn::loss_value(&minus, data.features.view(), &rows, &loss)
                                .unwrap())
                            / (2.0 * h);
                        let a = analytic.weights[l][[i, j]];
                        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                        worst = worst.max(rel);
                    }
                }
            }
            assert!(worst < 1e-4, "asym={asym}: max rel error {worst}");
        }
    }
}
