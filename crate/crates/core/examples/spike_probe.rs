use edgekd::data::{corrupt_labels, partition, Mixture, NoiseSpec, PartitionSpec};
use edgekd::distill::{distill_phase, DistillConfig, TeacherSet};
use edgekd::nn::{train_sgd, HardLabelLoss, Model, TrainSchedule, Activation};
use edgekd::seed::{derive, Stream};

fn mean_max_prob(m: &Model, x: ndarray::ArrayView2<f64>) -> f64 {
    let logits = m.forward(x).unwrap();
    let probs = edgekd::nn::softmax_with_temperature(&logits, 1.0).unwrap();
    probs.rows().into_iter().map(|r| r.iter().cloned().fold(0.0f64, f64::max)).sum::<f64>() / probs.nrows() as f64
}

fn main() {
    let mix = Mixture::with_clusters(10, 3, 20, 0.2, 7777).unwrap();
    let train = mix.sample(200, 7777, 0);
    let parts = partition(&train, &PartitionSpec { holdout_fraction: 0.3, seed: 4243, ..Default::default() }).unwrap();
    let core_sched = TrainSchedule { base_lr: 0.01, ..TrainSchedule::with_epochs(40) };
    let edge_sched = TrainSchedule { base_lr: 0.03, batch_size: 8, ..TrainSchedule::with_epochs(40) };
    let distill_sched = TrainSchedule { base_lr: 0.007, ..TrainSchedule::with_epochs(40) };

    let init = Model::seeded(&[20, 64, 64, 10], Activation::Relu, derive(1, Stream::PhaseZeroInit, 0, 0)).unwrap();
    let mut loss = HardLabelLoss::new(parts.core.labels.clone(), 10).unwrap();
    let core = train_sgd(&init, parts.core.features.view(), &mut loss, &core_sched, derive(1, Stream::PhaseZeroShuffle, 0, 0)).unwrap().model;
    let core_train_acc0 = edgekd::metrics::accuracy(&core, &parts.core).unwrap();

    let edge = &parts.edges[3];

    // clean teacher
    let mut lc = HardLabelLoss::new(edge.train.labels.clone(), 10).unwrap();
    let clean_teacher = train_sgd(&core, edge.train.features.view(), &mut lc, &edge_sched, 99).unwrap().model;

    // statically corrupted teacher
    let spec = NoiseSpec { p: 1.0, noisy_edge_ids: [4].into_iter().collect(), rng_seed: 5 };
    let corrupted = corrupt_labels(&edge.train, &spec, 8).unwrap();
    let mut ln = HardLabelLoss::new(corrupted.labels.clone(), 10).unwrap();
    let static_teacher = train_sgd(&core, corrupted.features.view(), &mut ln, &edge_sched, 99).unwrap().model;

    // re-corrupted teachers at varying periods: manual loop, one epoch at a time
    let mut periodic = Vec::new();
    for period in [1usize, 5, 10, 20] {
        let mut teacher = core.clone();
        for epoch in 0..40usize {
            let spec_e = NoiseSpec { p: 1.0, noisy_edge_ids: [4].into_iter().collect(), rng_seed: derive(5, Stream::Noise, (epoch / period) as u64, 0) };
            let ce = corrupt_labels(&edge.train, &spec_e, 8).unwrap();
            let mut le = HardLabelLoss::new(ce.labels.clone(), 10).unwrap();
            let mut one = edge_sched.clone();
            one.epochs = 1;
            one.decay_milestones.clear();
            one.base_lr = edge_sched.lr_at(epoch);
            teacher = train_sgd(&teacher, ce.features.view(), &mut le, &one, derive(99, Stream::EdgeShuffle, epoch as u64, 0)).unwrap().model;
        }
        periodic.push((format!("period-{period}"), teacher));
    }

    println!("core: train_acc={:.3}, conf_on_core={:.3}", core_train_acc0, mean_max_prob(&core, parts.core.features.view()));
    let mut all: Vec<(String, &Model)> = vec![("clean".into(), &clean_teacher), ("static".into(), &static_teacher)];
    for (n, t) in &periodic { all.push((n.clone(), t)); }
    for (name, t) in all {
        println!("{name}: conf_on_core={:.3}, acc_on_core={:.3}",
            mean_max_prob(t, parts.core.features.view()),
            edgekd::metrics::accuracy(t, &parts.core).unwrap());
        let cfg = DistillConfig::default();
        let report = distill_phase(&core, &TeacherSet::single(t.clone()), &parts.core, &cfg, &distill_sched, 7).unwrap();
        let test = mix.sample(400, 424242, 1 << 33);
        println!("   after distill: core train acc {:.3} | core test {:.3} (pre-distill test {:.3})",
            edgekd::metrics::accuracy(&report.model, &parts.core).unwrap(),
            edgekd::metrics::accuracy(&report.model, &test).unwrap(),
            edgekd::metrics::accuracy(&core, &test).unwrap());
    }
}
